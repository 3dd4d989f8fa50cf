#pragma once

// Records the scripted model's replies for a run so the same run can be
// replayed through MockProvider from a fixture file.

#include "biorag/pipeline.hpp"
#include "scripted_model.hpp"

namespace biorag::testing {

inline FixtureSet record_run(std::span<const Question> questions, PipelineConfig config, PipelineResources res,
                             const std::string& model = "mock") {
    ScriptedProvider scripted(model, scripted_reply);
    RecordingProvider recorder(scripted);
    res.provider = &recorder;
    config.parallelism = 1;
    run_pipeline(questions, config, res);
    return recorder.recorded();
}

inline void merge_into(FixtureSet& into, const FixtureSet& more) {
    for (const auto& [k, v] : more) into.emplace(k, v);
}

}  // namespace biorag::testing
