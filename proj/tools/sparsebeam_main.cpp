#include "sparsebeam_cli.hpp"

int main(int argc, char** argv) {
  sparsebeam::cli::retain_heap();
  return sparsebeam::cli::run_cli(argc, argv);
}
