// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "aliif/encoder.hpp"
#include "aliif/mlp.hpp"
#include "aliif/rng.hpp"

namespace aliif {

enum class Mode { liif, aliif };

inline const char* mode_name(Mode m) { return m == Mode::liif ? "liif" : "aliif"; }

template <typename S>
struct NamedParamT {
    std::string name;
    TensorT<S> tensor;  // shares storage with its owner
};

// Architecture hyperparameters. Defaults follow the reference setup: a K-way
// bank of 5-layer/16-wide basis MLPs gated by a 5-layer/256-wide expansion
// network over D=16 features from a B=4-block encoder.
struct ModelSpec {
    Mode mode = Mode::aliif;
    int k = 4;
    int d = 16;
    int b = 4;
    int mlp_layers = 5;
    int mlp_hidden = 16;
    int expansion_layers = 5;
    int expansion_hidden = 256;
    // Eq-variant knobs; see README. Both default off.
    bool outer_relu = false;
    bool share_ensemble_weights = false;

    // Basis/LIIF MLP input: 9*D unfolded features + rel coord (2) + cell (2).
    int decoder_in() const { return 9 * d + 4; }
    // Expansion network input: unfolded features + rel coord only.
    int expansion_in() const { return 9 * d + 2; }
};

template <typename S>
struct ModelT {
    ModelSpec spec;
    EncoderT<S> encoder;
    MlpT<S> mlp;                // liif mode
    MlpT<S> expansion;          // aliif mode
    std::vector<MlpT<S>> bank;  // aliif mode, K nets

    static ModelT make(const ModelSpec& spec, bool trainable = true) {
        if (spec.k < 1) dim_error("model: K must be >= 1");
        ModelT m;
        m.spec = spec;
        m.encoder = EncoderT<S>::make(spec.d, spec.b, trainable);
        if (spec.mode == Mode::liif) {
            m.mlp = MlpT<S>::make(spec.decoder_in(), spec.mlp_hidden, 3, spec.mlp_layers,
                                  trainable);
        } else {
            m.expansion = MlpT<S>::make(spec.expansion_in(), spec.expansion_hidden, spec.k,
                                        spec.expansion_layers, trainable);
            for (int k = 0; k < spec.k; ++k)
                m.bank.push_back(MlpT<S>::make(spec.decoder_in(), spec.mlp_hidden, 3,
                                               spec.mlp_layers, trainable));
        }
        return m;
    }

    // Every subnet draws from its own (seed, tag) stream, so the basis net
    // k in aliif mode and the single LIIF MLP see identical values for
    // matching k, and adding nets never shifts another net's draws.
    void init(uint64_t seed) {
        Rng enc_rng(seed, "init/encoder");
        encoder.init(enc_rng);
        if (spec.mode == Mode::liif) {
            Rng r(seed, "init/mlp.0");
            mlp.init(r);
        } else {
            Rng er(seed, "init/expansion");
            expansion.init(er);
            // Zero the final gating layer so the soft weights start exactly
            // uniform over the bank; a randomly initialized gate scrambles
            // early training at small step budgets.
            for (S& v : expansion.weights.back().data()) v = S(0);
            for (int k = 0; k < spec.k; ++k) {
                Rng r(seed, "init/mlp." + std::to_string(k));
                bank[static_cast<size_t>(k)].init(r);
            }
        }
    }

    // Declared parameter order; the checkpoint format serializes exactly
    // this sequence. Tensors share storage with the model.
    std::vector<NamedParamT<S>> parameters() {
        std::vector<NamedParamT<S>> out;
        out.push_back({"encoder.head.weight", encoder.head_w});
        out.push_back({"encoder.head.bias", encoder.head_b});
        for (size_t i = 0; i < encoder.blocks.size(); ++i) {
            const std::string p = "encoder.block" + std::to_string(i);
            out.push_back({p + ".conv1.weight", encoder.blocks[i].conv1_w});
            out.push_back({p + ".conv1.bias", encoder.blocks[i].conv1_b});
            out.push_back({p + ".conv2.weight", encoder.blocks[i].conv2_w});
            out.push_back({p + ".conv2.bias", encoder.blocks[i].conv2_b});
        }
        out.push_back({"encoder.tail.weight", encoder.tail_w});
        out.push_back({"encoder.tail.bias", encoder.tail_b});
        auto push_mlp = [&out](const std::string& prefix, MlpT<S>& net) {
            for (int i = 0; i < net.n_layers(); ++i) {
                const std::string p = prefix + ".layer" + std::to_string(i);
                out.push_back({p + ".weight", net.weights[static_cast<size_t>(i)]});
                out.push_back({p + ".bias", net.biases[static_cast<size_t>(i)]});
            }
        };
        if (spec.mode == Mode::liif) {
            push_mlp("mlp", mlp);
        } else {
            push_mlp("expansion", expansion);
            for (size_t k = 0; k < bank.size(); ++k) push_mlp("bank" + std::to_string(k), bank[k]);
        }
        return out;
    }

    int64_t parameter_count() {
        int64_t n = 0;
        for (auto& p : parameters()) n += p.tensor.numel();
        return n;
    }
};

}  // namespace aliif
