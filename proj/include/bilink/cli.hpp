#pragma once
// Command-line entry point: synth | pos-pretrain | train | eval | el-build |
// el-train | el-eval.

#include <cstdint>

#include "bilink/graph_store.hpp"

namespace bilink {

// 200 entities with a symmetric relation and an inverse pair, density 0.05.
SynthSpec default_synth_spec(std::uint64_t seed);

// Exit code: 0 success, 2 usage/config/parse error, 1 runtime failure.
int run_cli(int argc, const char* const* argv);

}  // namespace bilink
