#pragma once

#include <cmath>
#include <cstdio>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "groupalign/checkpoint.hpp"
#include "groupalign/optim.hpp"
#include "groupalign/pipeline.hpp"

namespace groupalign {

struct TrainConfig {
    // model
    int cls = 5;
    int in_channels = 3;
    std::vector<int> widths{32, 64, 128, 128};
    int k = 8;  // paper default group count
    int group_hidden = 64;
    bool group_on_raw_scores = false;
    std::vector<int> disc_channels{64, 128, 256, 512, 1};
    bool couple_q = false;
    ConditionMode condition_mode = ConditionMode::q;
    // losses
    LossWeights weights;
    LossToggle toggle;
    // optimization (paper values where the paper gives them)
    double lr_g = 2.5e-4;
    double lr_c = 1e-3;
    double lr_d = 1e-4;
    double poly_power = 0.9;
    double momentum = 0.9;    // segmentation network SGD
    double momentum_c = 0.0;  // grouping network SGD
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    bool d_lr_poly = false;  // whether Adam's rate also follows the poly schedule
    long long total_iters = 20000;  // desk-scale default (paper: 120k)
    int batch_size = 2;
    long long seed = 1;
    // plumbing
    long long checkpoint_every = 1000;
    long long log_every = 1;

    std::vector<std::string> validate() const {
        std::vector<std::string> warnings;
        if (!(lr_g > 0 && lr_c > 0 && lr_d > 0)) throw ConfigError("learning rates must be > 0");
        if (k < 1) throw ConfigError("K must be >= 1");
        if (total_iters < 1) throw ConfigError("total_iters must be >= 1");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (cls < 2) throw ConfigError("cls must be >= 2");
        weights.validate();
        if (k > cls)
            warnings.push_back("K=" + std::to_string(k) + " exceeds cls=" + std::to_string(cls) +
                               "; 1 <= K <= cls is the recommended range");
        return warnings;
    }
};

namespace detail {

inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::string fmt_ints(const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(v[i]);
    }
    return s;
}

inline std::vector<int> parse_ints(const std::string& s) {
    std::vector<int> out;
    for (const std::string& p : split_csv(s)) out.push_back(std::stoi(p));
    return out;
}

inline bool parse_bool(const std::string& s) {
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw ConfigError("not a boolean: '" + s + "'");
}

}  // namespace detail

// Canonical flat-key serialization; hashing this ties checkpoints to the
// exact configuration that produced them.
inline std::string train_config_text(const TrainConfig& c) {
    using detail::fmt_double;
    std::ostringstream out;
    out << "model.cls = " << c.cls << "\n";
    out << "model.in_channels = " << c.in_channels << "\n";
    out << "model.widths = " << detail::fmt_ints(c.widths) << "\n";
    out << "group.k = " << c.k << "\n";
    out << "group.hidden = " << c.group_hidden << "\n";
    out << "group.on_raw_scores = " << (c.group_on_raw_scores ? "true" : "false") << "\n";
    out << "disc.channels = " << detail::fmt_ints(c.disc_channels) << "\n";
    out << "disc.couple_q = " << (c.couple_q ? "true" : "false") << "\n";
    out << "disc.condition_mode = " << (c.condition_mode == ConditionMode::q ? "q" : "ones")
        << "\n";
    out << "loss.lambda_co = " << fmt_double(c.weights.lambda_co) << "\n";
    out << "loss.lambda_orth = " << fmt_double(c.weights.lambda_orth) << "\n";
    out << "loss.lambda_cadv = " << fmt_double(c.weights.lambda_cadv) << "\n";
    out << "loss.lambda_cl = " << fmt_double(c.weights.lambda_cl) << "\n";
    out << "loss.tau = " << fmt_double(c.weights.tau) << "\n";
    out << "loss.toggle = ";
    {
        std::vector<std::string> on;
        if (c.toggle.seg) on.push_back("seg");
        if (c.toggle.cadv) on.push_back("cadv");
        if (c.toggle.co) on.push_back("co");
        if (c.toggle.orth) on.push_back("orth");
        if (c.toggle.cl) on.push_back("cl");
        for (std::size_t i = 0; i < on.size(); ++i) out << (i ? "," : "") << on[i];
    }
    out << "\n";
    out << "train.lr_g = " << fmt_double(c.lr_g) << "\n";
    out << "train.lr_c = " << fmt_double(c.lr_c) << "\n";
    out << "train.lr_d = " << fmt_double(c.lr_d) << "\n";
    out << "train.poly_power = " << fmt_double(c.poly_power) << "\n";
    out << "train.momentum = " << fmt_double(c.momentum) << "\n";
    out << "train.momentum_c = " << fmt_double(c.momentum_c) << "\n";
    out << "train.adam_beta1 = " << fmt_double(c.adam_beta1) << "\n";
    out << "train.adam_beta2 = " << fmt_double(c.adam_beta2) << "\n";
    out << "train.d_lr_poly = " << (c.d_lr_poly ? "true" : "false") << "\n";
    out << "train.total_iters = " << c.total_iters << "\n";
    out << "train.batch_size = " << c.batch_size << "\n";
    out << "train.seed = " << c.seed << "\n";
    out << "train.checkpoint_every = " << c.checkpoint_every << "\n";
    out << "train.log_every = " << c.log_every << "\n";
    return out.str();
}

// Applies flat keys onto a TrainConfig; unknown keys are rejected when
// `strict`, otherwise ignored (so wider run configs can share the map).
inline void apply_train_config_kv(TrainConfig& c, const std::map<std::string, std::string>& kv,
                                  bool strict) {
    using detail::parse_bool;
    using detail::parse_ints;
    for (const auto& [key, value] : kv) {
        try {
            if (key == "model.cls") c.cls = std::stoi(value);
            else if (key == "model.in_channels") c.in_channels = std::stoi(value);
            else if (key == "model.widths") c.widths = parse_ints(value);
            else if (key == "group.k" || key == "K") c.k = std::stoi(value);
            else if (key == "group.hidden") c.group_hidden = std::stoi(value);
            else if (key == "group.on_raw_scores") c.group_on_raw_scores = parse_bool(value);
            else if (key == "disc.channels") c.disc_channels = parse_ints(value);
            else if (key == "disc.couple_q") c.couple_q = parse_bool(value);
            else if (key == "disc.condition_mode") {
                if (value == "q") c.condition_mode = ConditionMode::q;
                else if (value == "ones") c.condition_mode = ConditionMode::ones;
                else throw ConfigError("disc.condition_mode must be 'q' or 'ones'");
            } else if (key == "loss.lambda_co") c.weights.lambda_co = std::stod(value);
            else if (key == "loss.lambda_orth") c.weights.lambda_orth = std::stod(value);
            else if (key == "loss.lambda_cadv") c.weights.lambda_cadv = std::stod(value);
            else if (key == "loss.lambda_cl") c.weights.lambda_cl = std::stod(value);
            else if (key == "loss.tau") c.weights.tau = std::stod(value);
            else if (key == "loss.toggle") {
                c.toggle = LossToggle{false, false, false, false, false};
                for (const std::string& term : split_csv(value)) {
                    if (term == "seg") c.toggle.seg = true;
                    else if (term == "cadv") c.toggle.cadv = true;
                    else if (term == "co") c.toggle.co = true;
                    else if (term == "orth") c.toggle.orth = true;
                    else if (term == "cl") c.toggle.cl = true;
                    else throw ConfigError("unknown loss term in toggle: '" + term + "'");
                }
            } else if (key == "train.lr_g") c.lr_g = std::stod(value);
            else if (key == "train.lr_c") c.lr_c = std::stod(value);
            else if (key == "train.lr_d") c.lr_d = std::stod(value);
            else if (key == "train.poly_power") c.poly_power = std::stod(value);
            else if (key == "train.momentum") c.momentum = std::stod(value);
            else if (key == "train.momentum_c") c.momentum_c = std::stod(value);
            else if (key == "train.adam_beta1") c.adam_beta1 = std::stod(value);
            else if (key == "train.adam_beta2") c.adam_beta2 = std::stod(value);
            else if (key == "train.d_lr_poly") c.d_lr_poly = parse_bool(value);
            else if (key == "train.total_iters") c.total_iters = std::stoll(value);
            else if (key == "train.batch_size") c.batch_size = std::stoi(value);
            else if (key == "train.seed") c.seed = std::stoll(value);
            else if (key == "train.checkpoint_every") c.checkpoint_every = std::stoll(value);
            else if (key == "train.log_every") c.log_every = std::stoll(value);
            else if (strict) throw ConfigError("unknown config key: '" + key + "'");
        } catch (const std::invalid_argument&) {
            throw ConfigError("bad value for " + key + ": '" + value + "'");
        } catch (const std::out_of_range&) {
            throw ConfigError("value out of range for " + key + ": '" + value + "'");
        }
    }
}

inline TrainConfig train_config_from_text(const std::string& text) {
    TrainConfig c;
    apply_train_config_kv(c, flat_kv_parse(text), /*strict=*/false);
    return c;
}

inline std::uint64_t train_config_hash(const TrainConfig& c) {
    return fnv1a64(train_config_text(c));
}

// Full optimization state: the three networks, their optimizers, the
// iteration counter and the RNG that drives batch pairing.
struct TrainState {
    TrainConfig cfg;
    SegNet g;
    GroupNet c;
    PatchDiscriminator d;
    SgdOptimizer opt_g, opt_c;
    AdamOptimizer opt_d;
    long long iteration = 0;
    std::mt19937_64 rng;

    TrainState() = default;
    explicit TrainState(const TrainConfig& config) : cfg(config) {
        SegConfig gc;
        gc.in_channels = cfg.in_channels;
        gc.cls = cfg.cls;
        gc.widths = cfg.widths;
        g = SegNet(gc);
        GroupConfig cc;
        cc.cls = cfg.cls;
        cc.k = cfg.k;
        cc.hidden = cfg.group_hidden;
        cc.on_raw_scores = cfg.group_on_raw_scores;
        c = GroupNet(cc);
        DiscConfig dc;
        dc.in_channels = cfg.cls * cfg.cls;
        dc.channels = cfg.disc_channels;
        d = PatchDiscriminator(dc);
        opt_g.momentum = cfg.momentum;
        opt_c.momentum = cfg.momentum_c;
        opt_d.beta1 = cfg.adam_beta1;
        opt_d.beta2 = cfg.adam_beta2;
        rng.seed(static_cast<std::uint64_t>(cfg.seed));
        g.init(rng);
        c.init(rng);
        d.init(rng);
    }

    std::vector<ParamRef> g_params() {
        std::vector<ParamRef> p;
        g.collect(p);
        return p;
    }
    std::vector<ParamRef> c_params() {
        std::vector<ParamRef> p;
        std::vector<BufferRef> b;
        c.collect(p, b);
        return p;
    }
    std::vector<BufferRef> c_buffers() {
        std::vector<ParamRef> p;
        std::vector<BufferRef> b;
        c.collect(p, b);
        return b;
    }
    std::vector<ParamRef> d_params() {
        std::vector<ParamRef> p;
        d.collect(p);
        return p;
    }

    PipelineConfig pipeline_config() const {
        PipelineConfig pc;
        pc.weights = cfg.weights;
        pc.toggle = cfg.toggle;
        pc.condition_mode = cfg.condition_mode;
        pc.couple_q = cfg.couple_q;
        return pc;
    }
};

struct Batch {
    std::vector<Image> source_images;
    std::vector<LabelMap> source_labels;
    std::vector<Image> target_images;
};

namespace detail {

inline double grad_l2(const std::vector<Tensor>& grads) {
    double s = 0.0;
    for (const Tensor& g : grads)
        for (double x : g.v) s += x * x;
    return std::sqrt(s);
}

}  // namespace detail

// One alternation of Eq-7: (a) discriminator step on the current (frozen)
// generator outputs, (b) generator + grouping step against the updated
// discriminator.
inline LossReport train_step(TrainState& state, const Batch& batch) {
    const TrainConfig& cfg = state.cfg;
    if (batch.source_images.empty() || batch.source_images.size() != batch.target_images.size() ||
        batch.source_images.size() != batch.source_labels.size())
        throw DataError("train_step: batch must hold equally many source and target items");
    if (state.iteration >= cfg.total_iters)
        throw ConfigError("train_step: iteration beyond total_iters");

    const int pairs = static_cast<int>(batch.source_images.size());
    std::vector<SegNet::Forward> g_fwd(static_cast<std::size_t>(2) * pairs);
    std::vector<ScoreMap> maps(static_cast<std::size_t>(2) * pairs);
    for (int p = 0; p < pairs; ++p) {
        maps[p] = state.g.forward(batch.source_images[p], &g_fwd[p]);
        maps[pairs + p] = state.g.forward(batch.target_images[p], &g_fwd[pairs + p]);
    }
    std::vector<const ScoreMap*> source_maps, target_maps;
    std::vector<const LabelMap*> labels;
    for (int p = 0; p < pairs; ++p) {
        source_maps.push_back(&maps[p]);
        target_maps.push_back(&maps[pairs + p]);
        labels.push_back(&batch.source_labels[p]);
    }

    AlignmentPipeline pipe(&state.c, &state.d, state.pipeline_config());
    AlignmentState st = pipe.forward(source_maps, labels, target_maps, /*training=*/true);

    LossReport report;
    // (a) discriminator update
    if (cfg.toggle.cadv) {
        state.d.zero_grad();
        report.disc = pipe.disc_loss_and_grads(st);
        if (!std::isfinite(report.disc))
            throw NumericError("non-finite discriminator loss at iteration " +
                               std::to_string(state.iteration));
        const double lr_d = cfg.d_lr_poly
                                ? poly_lr(cfg.lr_d, state.iteration, cfg.total_iters, cfg.poly_power)
                                : cfg.lr_d;
        auto dp = state.d_params();
        state.opt_d.step(dp, lr_d);
    }

    // (b) generator + grouping update
    state.g.zero_grad();
    state.c.zero_grad();
    std::vector<Tensor> total_dscores(maps.size());
    for (std::size_t i = 0; i < maps.size(); ++i)
        total_dscores[i] = Tensor(maps[i].scores.h, maps[i].scores.w, maps[i].scores.c);

    struct TermSpec {
        LossTerm term;
        bool enabled;
        double weight;
        double* value;
        double* gnorm;
    };
    const TermSpec specs[] = {
        {LossTerm::seg, cfg.toggle.seg, 1.0, &report.seg, &report.gnorm_seg},
        {LossTerm::co, cfg.toggle.co, cfg.weights.lambda_co, &report.co, &report.gnorm_co},
        {LossTerm::orth, cfg.toggle.orth, cfg.weights.lambda_orth, &report.orth,
         &report.gnorm_orth},
        {LossTerm::cadv, cfg.toggle.cadv, cfg.weights.lambda_cadv, &report.cadv_g,
         &report.gnorm_cadv},
        {LossTerm::cl, cfg.toggle.cl, cfg.weights.lambda_cl, &report.cl, &report.gnorm_cl},
    };
    for (const TermSpec& spec : specs) {
        if (!spec.enabled) continue;  // disabled terms contribute exactly zero
        if (spec.weight == 0.0) {
            *spec.value = pipe.term_value_and_grad(st, spec.term, nullptr);
        } else {
            std::vector<Tensor> dscores(maps.size());
            *spec.value = pipe.term_value_and_grad(st, spec.term, &dscores, spec.weight);
            *spec.gnorm = detail::grad_l2(dscores);
            for (std::size_t i = 0; i < maps.size(); ++i)
                add_scaled(total_dscores[i], dscores[i], 1.0);
        }
        if (!std::isfinite(*spec.value))
            throw NumericError(std::string("non-finite loss term '") + loss_term_name(spec.term) +
                               "' at iteration " + std::to_string(state.iteration) +
                               " (seg=" + detail::fmt_double(report.seg) +
                               " co=" + detail::fmt_double(report.co) +
                               " orth=" + detail::fmt_double(report.orth) +
                               " cadv=" + detail::fmt_double(report.cadv_g) +
                               " cl=" + detail::fmt_double(report.cl) + ")");
    }
    LossWeights effective = cfg.weights;
    if (!cfg.toggle.co) effective.lambda_co = 0.0;
    if (!cfg.toggle.orth) effective.lambda_orth = 0.0;
    if (!cfg.toggle.cadv) effective.lambda_cadv = 0.0;
    if (!cfg.toggle.cl) effective.lambda_cl = 0.0;
    report.total = (cfg.toggle.seg ? report.seg : 0.0) + effective.lambda_co * report.co +
                   effective.lambda_orth * report.orth + effective.lambda_cadv * report.cadv_g +
                   effective.lambda_cl * report.cl;

    for (std::size_t i = 0; i < maps.size(); ++i) state.g.backward(g_fwd[i], total_dscores[i]);

    const double lr_g = poly_lr(cfg.lr_g, state.iteration, cfg.total_iters, cfg.poly_power);
    const double lr_c = poly_lr(cfg.lr_c, state.iteration, cfg.total_iters, cfg.poly_power);
    {
        auto gp = state.g_params();
        state.opt_g.step(gp, lr_g);
        auto cp = state.c_params();
        state.opt_c.step(cp, lr_c);
    }

    if (cfg.toggle.cadv) report.d_target_prob = pipe.target_domain_probs(st);
    else report.d_target_prob.assign(static_cast<std::size_t>(cfg.k), 0.0);

    ++state.iteration;
    return report;
}

// --- checkpointing ---------------------------------------------------------

inline Checkpoint make_checkpoint(TrainState& state) {
    Checkpoint ck;
    ck.config_text = train_config_text(state.cfg);
    ck.config_hash = fnv1a64(ck.config_text);
    ck.iteration = state.iteration;
    std::ostringstream rs;
    rs << state.rng;
    ck.rng_state = rs.str();
    auto put_params = [&ck](const std::vector<ParamRef>& params) {
        for (const ParamRef& p : params) ck.arrays[p.name] = *p.value;
    };
    put_params(state.g_params());
    put_params(state.c_params());
    put_params(state.d_params());
    for (const BufferRef& b : state.c_buffers()) ck.arrays[b.name] = *b.value;
    for (const auto& [name, buf] : state.opt_g.velocity) ck.arrays["opt_g." + name] = buf;
    for (const auto& [name, buf] : state.opt_c.velocity) ck.arrays["opt_c." + name] = buf;
    for (const auto& [name, buf] : state.opt_d.m) ck.arrays["opt_d.m." + name] = buf;
    for (const auto& [name, buf] : state.opt_d.v) ck.arrays["opt_d.v." + name] = buf;
    ck.arrays["opt_d.t"] = {static_cast<double>(state.opt_d.t)};
    return ck;
}

inline void save_checkpoint(TrainState& state, const std::string& path) {
    make_checkpoint(state).save(path);
}

// Restores a state whose config matches the checkpoint's config hash.
inline void restore_into(TrainState& state, const Checkpoint& ck) {
    if (ck.config_hash != train_config_hash(state.cfg))
        throw ConfigError("checkpoint config hash does not match the current configuration");
    state.iteration = ck.iteration;
    std::istringstream rs(ck.rng_state);
    rs >> state.rng;
    auto get_params = [&ck](const std::vector<ParamRef>& params) {
        for (const ParamRef& p : params) {
            const auto& arr = ck.require(p.name);
            if (arr.size() != p.value->size())
                throw DataError("checkpoint array size mismatch for " + p.name);
            *p.value = arr;
        }
    };
    get_params(state.g_params());
    get_params(state.c_params());
    get_params(state.d_params());
    for (const BufferRef& b : state.c_buffers()) *b.value = ck.require(b.name);
    state.opt_g.velocity.clear();
    state.opt_c.velocity.clear();
    state.opt_d.m.clear();
    state.opt_d.v.clear();
    for (const auto& [name, arr] : ck.arrays) {
        if (name.rfind("opt_g.", 0) == 0) state.opt_g.velocity[name.substr(6)] = arr;
        else if (name.rfind("opt_c.", 0) == 0) state.opt_c.velocity[name.substr(6)] = arr;
        else if (name.rfind("opt_d.m.", 0) == 0) state.opt_d.m[name.substr(8)] = arr;
        else if (name.rfind("opt_d.v.", 0) == 0) state.opt_d.v[name.substr(8)] = arr;
    }
    if (ck.arrays.count("opt_d.t"))
        state.opt_d.t = static_cast<long long>(ck.require("opt_d.t")[0]);
}

inline TrainState load_train_state(const std::string& path) {
    Checkpoint ck = Checkpoint::load(path);
    TrainConfig cfg = train_config_from_text(ck.config_text);
    TrainState state(cfg);
    restore_into(state, ck);
    return state;
}

}  // namespace groupalign
