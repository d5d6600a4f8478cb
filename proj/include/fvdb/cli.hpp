#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace fvdb {

/// Exit codes of the command-line tool.
enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitCheck = 3 };

/// Columns shared by every benchmark row; unused parameters are left empty.
inline constexpr const char* kBenchCsvHeader =
    "workload,n,res,regime,variant,c_in,c_out,threads,run,wall_s,throughput,peak_mem_bytes,counter_dda_steps,"
    "counter_pad_rows";

/// Runs one subcommand; args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

}  // namespace fvdb
