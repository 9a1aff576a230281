use std::io::Write;

fn main() {
    let mut stdout = std::io::stdout().lock();
    let code = gformer::cli::run(std::env::args_os(), &mut stdout);
    let _ = stdout.flush();
    std::process::exit(code);
}
