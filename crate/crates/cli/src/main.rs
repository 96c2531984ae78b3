use clap::error::ErrorKind;
use clap::Parser;
use vsmile::{Cli, CliError};

fn fail(e: CliError) -> ! {
    eprintln!("{}", e.to_json());
    std::process::exit(e.exit_code());
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(
            e.kind(),
            ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand
        ) =>
        {
            e.exit()
        }
        Err(e) => fail(CliError::Usage(e.to_string().trim_end().to_string())),
    };
    if let Err(e) = vsmile::run(cli) {
        fail(e);
    }
}
