// Copyright Contributors to the splatkern Project
// SPDX-License-Identifier: Apache-2.0

#include <splatkern/app/cli.hpp>

int main(int argc, char **argv) { return splatkern::app::run_cli(argc, argv); }
