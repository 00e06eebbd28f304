use std::process::ExitCode;

// Die quietly on SIGPIPE like other Unix tools instead of panicking when
// a downstream reader (e.g. `head`) closes stdout early.
#[cfg(unix)]
fn reset_sigpipe() {
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
}

#[cfg(not(unix))]
fn reset_sigpipe() {}

fn main() -> ExitCode {
    reset_sigpipe();
    provrepeat::cli::main()
}
