// SPDX-License-Identifier: Apache-2.0
#include "hopscotch/cli.hpp"

int main(int argc, char** argv) { return hopscotch::run_cli(argc, argv); }
