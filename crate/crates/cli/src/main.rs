use std::io;

fn main() {
    let code = dynrep_cli::main_with_args(std::env::args_os(), &mut io::stdout().lock(), &mut io::stderr());
    std::process::exit(code);
}
