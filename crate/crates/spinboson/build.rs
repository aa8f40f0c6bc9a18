fn main() {
    // Link the system OpenBLAS (provides BLAS + LAPACK symbols) for ndarray-linalg.
    println!("cargo:rustc-link-lib=dylib=openblas");
}
