#pragma once

// ct-graph command line: synth, encode, pool, graph, train, infer, eval, run.
// Exit codes: 0 ok, 1 runtime failure, 2 configuration or validation error.

namespace ctgraph {

inline constexpr const char* kThreadsEnv = "CTGRAPH_THREADS";

int run_cli(int argc, char** argv);

}  // namespace ctgraph
