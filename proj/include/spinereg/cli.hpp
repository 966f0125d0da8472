#pragma once

namespace spinereg {

/// Exit codes of the `spinereg` command.
enum ExitCode : int {
    kExitOk = 0,
    kExitUsage = 1,         // bad flags or arguments
    kExitIo = 2,            // unreadable / unwritable / malformed files
    kExitPrecondition = 3,  // inputs violate a precondition (absent label, empty mesh, duplicate timepoint)
    kExitDegenerate = 4,    // numerical degeneracy
    kExitInternal = 5,
};

/// Entry point of the `spinereg` command (subcommands surface, register,
/// study, metrics, synth). Reports go to files, logs to stderr.
int run_cli(int argc, char** argv);

}  // namespace spinereg
