#include "pumba/config.hpp"

#include <fstream>

#include <json.hpp>

namespace pumba {

namespace {

using nlohmann::json;

void check_keys(const json& obj, const std::vector<std::string>& allowed,
                const std::string& where) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool ok = false;
        for (const auto& k : allowed)
            if (it.key() == k) ok = true;
        if (!ok)
            throw ConfigError("config: unknown key '" + it.key() + "' in " + where);
    }
}

template <typename T>
void maybe(const json& obj, const char* key, T& target) {
    if (obj.contains(key)) target = obj.at(key).get<T>();
}

void parse_groups(const json& obj, BranchGroupSpec& spec) {
    check_keys(obj, {"shape", "rasa", "charge", "hbond", "hydropathy"}, "model.groups");
    for (auto& group : spec.groups) {
        if (!obj.contains(group.name)) continue;
        const json& g = obj.at(group.name);
        check_keys(g, {"channels", "energies"}, "model.groups." + group.name);
        maybe(g, "channels", group.channels);
        maybe(g, "energies", group.energies);
    }
}

}  // namespace

RunConfig config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    RunConfig cfg;
    check_keys(j, {"model", "train", "synthetic", "eval"}, "top level");
    if (j.contains("model")) {
        const json& m = j.at("model");
        check_keys(m,
                   {"image_size", "patch_size", "channels", "embed_dim", "layers", "expand",
                    "conv_kernel", "state_size", "exact_zoh", "fc_hidden", "final_layers",
                    "groups"},
                   "model");
        maybe(m, "image_size", cfg.model.vim.image_size);
        maybe(m, "patch_size", cfg.model.vim.patch_size);
        maybe(m, "channels", cfg.model.vim.channels);
        maybe(m, "embed_dim", cfg.model.vim.embed_dim);
        maybe(m, "layers", cfg.model.vim.layers);
        maybe(m, "expand", cfg.model.vim.expand);
        maybe(m, "conv_kernel", cfg.model.vim.conv_kernel);
        maybe(m, "state_size", cfg.model.vim.state_size);
        maybe(m, "exact_zoh", cfg.model.vim.exact_zoh);
        maybe(m, "fc_hidden", cfg.model.fc_hidden);
        maybe(m, "final_layers", cfg.model.final_layers);
        if (m.contains("groups")) parse_groups(m.at("groups"), cfg.model.spec);
    }
    if (j.contains("train")) {
        const json& t = j.at("train");
        check_keys(t,
                   {"steps", "batch_complexes", "decoys_per_complex", "lr", "weight_decay",
                    "beta1", "beta2", "eps", "w_bce", "w_supcon", "w_rank", "temperature",
                    "margin", "seed", "log_every"},
                   "train");
        maybe(t, "steps", cfg.train.steps);
        maybe(t, "batch_complexes", cfg.train.batch_complexes);
        maybe(t, "decoys_per_complex", cfg.train.decoys_per_complex);
        maybe(t, "lr", cfg.train.opt.lr);
        maybe(t, "weight_decay", cfg.train.opt.weight_decay);
        maybe(t, "beta1", cfg.train.opt.beta1);
        maybe(t, "beta2", cfg.train.opt.beta2);
        maybe(t, "eps", cfg.train.opt.eps);
        maybe(t, "w_bce", cfg.train.weights.w_bce);
        maybe(t, "w_supcon", cfg.train.weights.w_supcon);
        maybe(t, "w_rank", cfg.train.weights.w_rank);
        maybe(t, "temperature", cfg.train.weights.temperature);
        maybe(t, "margin", cfg.train.weights.margin);
        maybe(t, "seed", cfg.train.seed);
        maybe(t, "log_every", cfg.train.log_every);
    }
    if (j.contains("synthetic")) {
        const json& s = j.at("synthetic");
        check_keys(s,
                   {"complexes", "decoys_per_complex", "image_size", "channels", "signal",
                    "noise", "seed"},
                   "synthetic");
        maybe(s, "complexes", cfg.synth.complexes);
        maybe(s, "decoys_per_complex", cfg.synth.decoys_per_complex);
        maybe(s, "image_size", cfg.synth.image_size);
        maybe(s, "channels", cfg.synth.channels);
        maybe(s, "signal", cfg.synth.signal);
        maybe(s, "noise", cfg.synth.noise);
        maybe(s, "seed", cfg.synth.seed);
    }
    if (j.contains("eval")) {
        const json& e = j.at("eval");
        check_keys(e, {"threshold", "success_ks", "capri_ks"}, "eval");
        maybe(e, "threshold", cfg.eval.threshold);
        maybe(e, "success_ks", cfg.eval.success_ks);
        maybe(e, "capri_ks", cfg.eval.capri_ks);
    }
    return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file: " + path.string());
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return config_from_json(text);
}

std::string config_to_json(const RunConfig& cfg) {
    json groups;
    for (const auto& g : cfg.model.spec.groups)
        groups[g.name] = {{"channels", g.channels}, {"energies", g.energies}};
    json j = {
        {"model",
         {{"image_size", cfg.model.vim.image_size},
          {"patch_size", cfg.model.vim.patch_size},
          {"channels", cfg.model.vim.channels},
          {"embed_dim", cfg.model.vim.embed_dim},
          {"layers", cfg.model.vim.layers},
          {"expand", cfg.model.vim.expand},
          {"conv_kernel", cfg.model.vim.conv_kernel},
          {"state_size", cfg.model.vim.state_size},
          {"exact_zoh", cfg.model.vim.exact_zoh},
          {"fc_hidden", cfg.model.fc_hidden},
          {"final_layers", cfg.model.final_layers},
          {"groups", groups}}},
        {"train",
         {{"steps", cfg.train.steps},
          {"batch_complexes", cfg.train.batch_complexes},
          {"decoys_per_complex", cfg.train.decoys_per_complex},
          {"lr", cfg.train.opt.lr},
          {"weight_decay", cfg.train.opt.weight_decay},
          {"beta1", cfg.train.opt.beta1},
          {"beta2", cfg.train.opt.beta2},
          {"eps", cfg.train.opt.eps},
          {"w_bce", cfg.train.weights.w_bce},
          {"w_supcon", cfg.train.weights.w_supcon},
          {"w_rank", cfg.train.weights.w_rank},
          {"temperature", cfg.train.weights.temperature},
          {"margin", cfg.train.weights.margin},
          {"seed", cfg.train.seed},
          {"log_every", cfg.train.log_every}}},
        {"synthetic",
         {{"complexes", cfg.synth.complexes},
          {"decoys_per_complex", cfg.synth.decoys_per_complex},
          {"image_size", cfg.synth.image_size},
          {"channels", cfg.synth.channels},
          {"signal", cfg.synth.signal},
          {"noise", cfg.synth.noise},
          {"seed", cfg.synth.seed}}},
        {"eval",
         {{"threshold", cfg.eval.threshold},
          {"success_ks", cfg.eval.success_ks},
          {"capri_ks", cfg.eval.capri_ks}}}};
    return j.dump(2);
}

std::vector<size_t> parse_k_list(const std::string& text) {
    std::vector<size_t> ks;
    std::string cur;
    for (char c : text + ",") {
        if (c == ',') {
            if (cur.empty()) continue;
            try {
                ks.push_back(std::stoul(cur));
            } catch (const std::exception&) {
                throw ConfigError("bad k-list entry '" + cur + "'");
            }
            cur.clear();
        } else if (!std::isspace(static_cast<unsigned char>(c))) {
            cur.push_back(c);
        }
    }
    if (ks.empty()) throw ConfigError("k-list is empty");
    return ks;
}

}  // namespace pumba
