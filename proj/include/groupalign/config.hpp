#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "groupalign/data.hpp"
#include "groupalign/trainer.hpp"

namespace groupalign {

// One layered configuration drives every subcommand. Precedence:
// command-line --set pairs > config file > built-in defaults.
struct RunConfig {
    TrainConfig train;
    SyntheticSpec synth;
    std::string data_root;
    std::string out_dir;
    std::string name = "run";
    int eval_limit = 0;       // 0 = evaluate the full val split
    int ablate_seeds = 3;

    std::vector<std::string> validate() const { return train.validate(); }
};

inline void apply_synth_kv(SyntheticSpec& s, const std::string& key, const std::string& value) {
    if (key == "synth.cls") s.cls = std::stoi(value);
    else if (key == "synth.height") s.height = std::stoi(value);
    else if (key == "synth.width") s.width = std::stoi(value);
    else if (key == "synth.n_source") s.n_source = std::stoi(value);
    else if (key == "synth.n_target") s.n_target = std::stoi(value);
    else if (key == "synth.n_val") s.n_val = std::stoi(value);
    else if (key == "synth.seed") s.seed = std::stoll(value);
    else if (key == "synth.hue_delta") s.shift.hue_delta = std::stod(value);
    else if (key == "synth.brightness_delta") s.shift.brightness_delta = std::stod(value);
    else if (key == "synth.noise_sigma") s.shift.noise_sigma = std::stod(value);
    else if (key == "synth.texture_mode") s.shift.texture_mode = std::stoi(value);
    else if (key == "synth.class_frequency") {
        s.class_frequency.clear();
        for (const std::string& p : split_csv(value)) s.class_frequency.push_back(std::stod(p));
    } else throw ConfigError("unknown config key: '" + key + "'");
}

inline bool is_train_key(const std::string& key) {
    static const char* prefixes[] = {"model.", "group.", "disc.", "loss.", "train."};
    if (key == "K") return true;
    for (const char* p : prefixes)
        if (key.rfind(p, 0) == 0) return true;
    return false;
}

inline void apply_run_config_kv(RunConfig& c, const std::map<std::string, std::string>& kv) {
    for (const auto& [key, value] : kv) {
        try {
            if (is_train_key(key)) {
                apply_train_config_kv(c.train, {{key, value}}, /*strict=*/true);
            } else if (key.rfind("synth.", 0) == 0) {
                apply_synth_kv(c.synth, key, value);
            } else if (key == "data.root") c.data_root = value;
            else if (key == "out.dir") c.out_dir = value;
            else if (key == "run.name") c.name = value;
            else if (key == "eval.limit") c.eval_limit = std::stoi(value);
            else if (key == "ablate.seeds") c.ablate_seeds = std::stoi(value);
            else throw ConfigError("unknown config key: '" + key + "'");
        } catch (const std::invalid_argument&) {
            throw ConfigError("bad value for " + key + ": '" + value + "'");
        } catch (const std::out_of_range&) {
            throw ConfigError("value out of range for " + key + ": '" + value + "'");
        }
    }
}

inline std::string run_config_text(const RunConfig& c) {
    std::ostringstream out;
    out << "run.name = " << c.name << "\n";
    out << "data.root = " << c.data_root << "\n";
    out << "out.dir = " << c.out_dir << "\n";
    out << "eval.limit = " << c.eval_limit << "\n";
    out << "ablate.seeds = " << c.ablate_seeds << "\n";
    out << train_config_text(c.train);
    out << "synth.cls = " << c.synth.cls << "\n";
    out << "synth.height = " << c.synth.height << "\n";
    out << "synth.width = " << c.synth.width << "\n";
    out << "synth.n_source = " << c.synth.n_source << "\n";
    out << "synth.n_target = " << c.synth.n_target << "\n";
    out << "synth.n_val = " << c.synth.n_val << "\n";
    out << "synth.seed = " << c.synth.seed << "\n";
    out << "synth.hue_delta = " << detail::fmt_double(c.synth.shift.hue_delta) << "\n";
    out << "synth.brightness_delta = " << detail::fmt_double(c.synth.shift.brightness_delta)
        << "\n";
    out << "synth.noise_sigma = " << detail::fmt_double(c.synth.shift.noise_sigma) << "\n";
    out << "synth.texture_mode = " << c.synth.shift.texture_mode << "\n";
    out << "synth.class_frequency = ";
    for (std::size_t i = 0; i < c.synth.class_frequency.size(); ++i)
        out << (i ? "," : "") << detail::fmt_double(c.synth.class_frequency[i]);
    out << "\n";
    return out.str();
}

// Layered load: file first (optional), then ordered --set overrides.
inline RunConfig load_run_config(const std::string& config_path,
                                 const std::vector<std::string>& set_pairs) {
    RunConfig cfg;
    if (!config_path.empty()) {
        std::ifstream in(config_path);
        if (!in) throw ConfigError("cannot open config file: " + config_path);
        std::stringstream buf;
        buf << in.rdbuf();
        apply_run_config_kv(cfg, flat_kv_parse(buf.str()));
    }
    for (const std::string& pair : set_pairs) {
        const std::size_t eq = pair.find('=');
        if (eq == std::string::npos)
            throw ConfigError("--set expects key=value, got '" + pair + "'");
        apply_run_config_kv(cfg, {{trim(pair.substr(0, eq)), trim(pair.substr(eq + 1))}});
    }
    return cfg;
}

}  // namespace groupalign
