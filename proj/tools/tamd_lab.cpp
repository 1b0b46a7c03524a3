// tamd_lab: runs one experiment described by a key=value config file.
//
//   tamd_lab configs/sweep.ini --output-dir out --threads 4
//
// Exit status: 0 ok, 2 config error, 3 numerical guard, 4 solver failure.

#include <iostream>

#include <CLI11.hpp>

#include "tamd/tamd.hpp"

int main(int argc, char** argv) {
  CLI::App app{"TAMD numerical lab"};
  std::string config_path;
  tamd::RunOptions opt;
  std::string out_dir = ".";
  bool dry_run = false;
  app.add_option("config", config_path, "experiment config file")->required();
  app.add_option("--output-dir", out_dir, "directory for CSV outputs");
  app.add_flag("--dry-run", dry_run, "print the resolved plan and exit");
  app.add_option("--threads", opt.threads, "worker threads for replica jobs")->check(CLI::PositiveNumber);
  app.add_flag("--include-q", opt.include_q, "write q columns to trajectory files");
  CLI11_PARSE(app, argc, argv);
  opt.output_dir = out_dir;

  try {
    const auto cfg = tamd::load_config(config_path);
    if (dry_run) {
      tamd::describe(cfg, opt, std::cout);
      return 0;
    }
    for (const auto& p : tamd::run(cfg, opt, std::cerr)) std::cout << p.string() << "\n";
    return 0;
  } catch (const tamd::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
