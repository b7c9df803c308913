#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "ddr/adapter.hpp"
#include "ddr/toy_policy.hpp"

// Serves the line protocol on stdin/stdout, one reply per request line.
int main(int argc, char** argv) {
  CLI::App app{"ddr-adapter-peer: line-protocol model server"};
  std::string checkpoint;
  bool echo = false;
  auto* ck = app.add_option("--checkpoint", checkpoint, "toy policy checkpoint to serve");
  auto* ec = app.add_flag("--echo", echo, "echo the last prompt line; logprob unsupported");
  ck->excludes(ec);
  CLI11_PARSE(app, argc, argv);
  if (checkpoint.empty() && !echo) {
    std::cerr << "one of --checkpoint or --echo is required\n";
    return 2;
  }

  std::optional<ddr::ToyPolicy> policy;
  try {
    if (!checkpoint.empty()) policy = ddr::load_checkpoint(checkpoint);
  } catch (const std::exception& e) {
    std::cerr << "ddr-adapter-peer: " << e.what() << "\n";
    return 1;
  }

  std::ios::sync_with_stdio(false);
  std::string line;
  while (std::getline(std::cin, line)) {
    if (line.empty()) continue;
    std::cout << ddr::protocol::handle_line(policy ? &*policy : nullptr, line) << '\n' << std::flush;
  }
  return 0;
}
