// SPDX-License-Identifier: Apache-2.0

#include "guiderag_cli/cli.hpp"

int main(int argc, char** argv) { return guiderag::cli::cli_main(argc, argv); }
