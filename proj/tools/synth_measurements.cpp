// Writes the measurement CSV a platform model would produce on the standard
// convolution sweep, optionally with multiplicative noise.
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "pipeit/perfmodel.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Synthesize measurements from a platform model"};
  std::string platform, out;
  pipeit::SynthOptions opt;
  app.add_option("--platform", platform, "Platform JSON")->required();
  app.add_option("--out", out, "CSV to write")->required();
  app.add_option("--noise", opt.noise, "Relative noise standard deviation");
  app.add_option("--seed", opt.seed, "Noise seed");
  CLI11_PARSE(app, argc, argv);
  try {
    auto p = pipeit::load_platform(platform);
    std::ofstream f(out);
    f << pipeit::format_measurements(pipeit::synthesize_measurements(p, opt));
    if (!f) throw pipeit::Error("cannot write '" + out + "'");
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
