#include <iostream>
#include "cli_args.hpp"

int main(int argc, char** argv)
{
    CLI::App app{"Sparse finite mixture of regressions"};
    fmrlasso::cli::ArgState state;
    fmrlasso::cli::RunConfig cfg;
    try {
        cfg = fmrlasso::cli::parse_args(argc, argv, app, state);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        std::cerr << fmrlasso::io::error_to_json("usage_error", e.what()).dump() << '\n';
        return fmrlasso::cli::kExitError;
    } catch (const fmrlasso::error& e) {
        std::cerr << fmrlasso::io::error_to_json(e.kind(), e.what()).dump() << '\n';
        return fmrlasso::cli::kExitError;
    }
    return fmrlasso::cli::run(cfg);
}
