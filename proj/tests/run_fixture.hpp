#pragma once

#include "c2bm/pipeline.hpp"
#include "fixtures.hpp"

namespace fixtures {

inline c2bm::RunConfig small_asia_config() {
    auto cfg = c2bm::RunConfig::from_json({{"dataset", {{"n", 1500}}}, {"eval", {{"policy_seeds", 2}}}});
    return cfg;
}

// One trained Asia run shared by the pipeline and service tests.
inline const std::filesystem::path& small_asia_run() {
    static TempDir dir("run");
    static const bool done = [] {
        c2bm::Pipeline(small_asia_config(), dir.path()).run_all();
        return true;
    }();
    (void)done;
    return dir.path();
}

}  // namespace fixtures
