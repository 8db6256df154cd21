#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace qbsde {

/**
 * Entry point of the `qbsde` command line tool. Subcommands:
 *   solve              --config run.json [--out report.json] [--dump solution.json]
 *   sweep              --config study.json [--csv rows.csv]
 *   rate               --csv rows.csv
 *   check-assumptions  --problem NAME | --config run.json [--samples 200] [--seed 7] [--violations f.csv]
 *   counterexample     zhang|bounded2d --t 0.9,0.99 [--x 0,0]
 *   grid               --T 1 --eps 0.25 --n 2 [--c 0.5 | --tail-steps 3] [--M 1] [--M1 0] [--M2 0.5]
 * Returns the process exit code; regular output goes to `out`, diagnostics to `err`.
 */
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace qbsde
