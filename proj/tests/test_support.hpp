#pragma once

#include "csad/strategies.hpp"
#include "csad/synthetic.hpp"

namespace csad::testing_support {

inline SSVAEConfig synthetic_model_config(int dim, int epochs = 10) {
    SSVAEConfig mc;
    mc.input_dim = dim;
    mc.latent_dim = 4;
    mc.encoder_hidden = {64, 32};
    mc.classifier.conv.clear();
    mc.classifier.dense = {32};
    mc.batch_size = 32;
    mc.max_epochs = epochs;
    return mc;
}

inline bool same_params(const SSVAEModel& a, const SSVAEModel& b) {
    const auto pa = a.params(), pb = b.params();
    if (pa.size() != pb.size()) return false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        if (pa[i]->rows() != pb[i]->rows() || pa[i]->cols() != pb[i]->cols()) return false;
        if (std::memcmp(pa[i]->data(), pb[i]->data(), sizeof(double) * static_cast<std::size_t>(pa[i]->size())) != 0)
            return false;
    }
    return true;
}

struct SyntheticRun {
    StrategyRun run;
    std::vector<EpisodeResult> final;
    SSVAEModel model;
};

inline SyntheticRun run_synthetic(const SyntheticSpec& spec, const StrategyConfig& sc, int epochs = 10) {
    const auto b = make_synthetic_stream(spec);
    SSVAEModel model(synthetic_model_config(spec.dim, epochs), derive_seed(spec.seed, "model"));
    const RunContext ctx{spec.seed, &b.validation, &b.test};
    auto run = run_strategy(model, b.train, ctx, sc);
    auto final = evaluate_stream(model, b.test, spec.seed);
    return {std::move(run), std::move(final), std::move(model)};
}

inline double episode0_forgetting(const SyntheticRun& r) {
    return *final_vs_during(r.run.during, r.final)[0].forgetting();
}

}  // namespace csad::testing_support
