// pumba CLI: gen-synthetic | train | score | eval | explain
// Exit codes: 0 success, 2 configuration errors, 3 data errors.

#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <map>

#include "pumba/checkpoint.hpp"
#include "pumba/config.hpp"
#include "pumba/dataset.hpp"
#include "pumba/evaluation.hpp"
#include "pumba/explain.hpp"
#include "pumba/synthetic.hpp"
#include "pumba/threading.hpp"
#include "pumba/trainer.hpp"

namespace {

using namespace pumba;

struct LoadedModel {
    RunConfig cfg;
    PumbaParams params;
};

LoadedModel load_model(const std::filesystem::path& checkpoint_path) {
    auto ckpt = load_checkpoint(checkpoint_path);
    LoadedModel m;
    m.cfg = config_from_json(ckpt.config_json);
    Rng rng(m.cfg.train.seed);
    m.params = init_pumba_params<float>(m.cfg.model, rng);
    ParamMap pm;
    register_pumba_params(m.params, pm);
    restore_params(pm, ckpt.params);
    return m;
}

void validate_container_vs_model(const DatasetContainer& data, const ModelConfig& model) {
    if (data.channels() != model.vim.channels || data.image_size() != model.vim.image_size)
        throw DataError("container holds " + std::to_string(data.channels()) + "x" +
                        std::to_string(data.image_size()) + "x" +
                        std::to_string(data.image_size()) + " images, model expects " +
                        std::to_string(model.vim.channels) + "x" +
                        std::to_string(model.vim.image_size) + "x" +
                        std::to_string(model.vim.image_size));
}

std::string fmt_score(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

int cmd_gen_synthetic(const RunConfig& cfg, const std::string& out_dir) {
    cfg.synth.validate();
    generate_synthetic(cfg.synth, out_dir);
    std::cout << "wrote " << cfg.synth.complexes * (cfg.synth.decoys_per_complex + 1)
              << " samples to " << out_dir << "\n";
    return 0;
}

int cmd_train(const RunConfig& cfg, const std::string& data_dir, const std::string& out_path,
              const std::string& log_path, const std::string& resume_path) {
    auto container = DatasetContainer::open(data_dir);
    validate_container_vs_model(container, cfg.model);
    auto samples = container.load_all();

    Rng rng(cfg.train.seed);
    auto model = init_pumba_params<float>(cfg.model, rng);
    Trainer trainer(model, samples, cfg.train);
    if (!resume_path.empty()) {
        auto ckpt = load_checkpoint(resume_path);
        restore_params(trainer.params(), ckpt.params);
        trainer.optimizer().slots() = ckpt.opt_slots;
        trainer.optimizer().set_step_count(ckpt.opt_step);
        trainer.set_steps_done(ckpt.steps_done);
    }

    std::ofstream log;
    if (!log_path.empty()) {
        log.open(log_path, std::ios::trunc);
        if (!log) throw DataError("cannot open training log: " + log_path);
        log << "step,total,bce,supcon,rank\n";
    }
    for (size_t i = 0; i < cfg.train.steps; ++i) {
        const size_t step = trainer.steps_done();
        auto bd = trainer.step();
        if (log)
            log << step << ',' << bd.total << ',' << bd.bce << ',' << bd.supcon << ','
                << bd.rank << '\n';
        if (cfg.train.log_every && step % cfg.train.log_every == 0)
            std::cout << "step " << step << "  total " << bd.total << "  bce " << bd.bce
                      << "  supcon " << bd.supcon << "  rank " << bd.rank << "\n";
    }

    CheckpointData ckpt;
    ckpt.config_json = config_to_json(cfg);
    ckpt.params = trainer.params();
    ckpt.opt_config = trainer.optimizer().config();
    ckpt.opt_step = trainer.optimizer().step_count();
    ckpt.opt_slots = trainer.optimizer().slots();
    ckpt.sampler_rng_state = std::to_string(cfg.train.seed);
    ckpt.steps_done = trainer.steps_done();
    save_checkpoint(out_path, ckpt);
    std::cout << "checkpoint written to " << out_path << "\n";
    return 0;
}

int cmd_score(const std::string& checkpoint_path, const std::string& data_dir,
              const std::string& out_path) {
    auto model = load_model(checkpoint_path);
    auto container = DatasetContainer::open(data_dir);
    validate_container_vs_model(container, model.cfg.model);
    if (container.size() == 0) throw DataError("container " + data_dir + " holds no samples");

    std::vector<double> scores(container.size());
    parallel_for(container.size(), [&](size_t i) {
        auto sample = container.read_sample(i);
        scores[i] = score_sample(sample, model.params).score;
    });

    std::ostream* out = &std::cout;
    std::ofstream file;
    if (!out_path.empty()) {
        file.open(out_path, std::ios::trunc);
        if (!file) throw DataError("cannot open score output: " + out_path);
        out = &file;
    }
    *out << "complex_id,model_id,score\n";
    for (size_t i = 0; i < container.size(); ++i)
        *out << container.records()[i].complex_id << ',' << container.records()[i].model_id
             << ',' << fmt_score(scores[i]) << '\n';
    return 0;
}

std::map<std::pair<std::string, std::string>, double> read_scores_csv(
    const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open scores CSV: " + path);
    std::string line;
    if (!std::getline(f, line) || line != "complex_id,model_id,score")
        throw DataError("scores CSV " + path + ": missing header line");
    std::map<std::pair<std::string, std::string>, double> scores;
    size_t lineno = 1;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        const size_t c1 = line.find(',');
        const size_t c2 = c1 == std::string::npos ? std::string::npos : line.find(',', c1 + 1);
        if (c2 == std::string::npos)
            throw DataError("scores CSV line " + std::to_string(lineno) + ": want 3 fields");
        try {
            scores[{line.substr(0, c1), line.substr(c1 + 1, c2 - c1 - 1)}] =
                std::stod(line.substr(c2 + 1));
        } catch (const std::exception&) {
            throw DataError("scores CSV line " + std::to_string(lineno) + ": bad score");
        }
    }
    return scores;
}

int cmd_eval(const RunConfig& cfg, const std::string& scores_path, const std::string& data_dir,
             const std::string& out_dir) {
    auto scores = read_scores_csv(scores_path);
    auto container = DatasetContainer::open(data_dir);
    std::map<std::string, RankedModelSet> by_complex;
    for (const auto& rec : container.records()) {
        auto it = scores.find({rec.complex_id, rec.model_id});
        if (it == scores.end())
            throw DataError("scores CSV is missing (" + rec.complex_id + ", " + rec.model_id +
                            ")");
        auto& set = by_complex[rec.complex_id];
        set.complex_id = rec.complex_id;
        set.models.push_back({rec.model_id, it->second, rec.label, rec.category});
    }
    size_t manifest_models = 0;
    for (auto& [cid, set] : by_complex) manifest_models += set.models.size();
    if (manifest_models != scores.size())
        throw DataError("scores CSV holds " + std::to_string(scores.size()) +
                        " rows, manifest " + std::to_string(manifest_models));
    std::vector<RankedModelSet> sets;
    for (auto& [cid, set] : by_complex) sets.push_back(std::move(set));

    auto report =
        compute_report(sets, cfg.eval.threshold, cfg.eval.success_ks, cfg.eval.capri_ks);
    const std::string text = format_report_text(report);
    std::cout << text;
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        std::ofstream t(std::filesystem::path(out_dir) / "metrics.txt", std::ios::trunc);
        t << text;
        std::ofstream c(std::filesystem::path(out_dir) / "metrics.csv", std::ios::trunc);
        c << format_report_csv(report);
    }
    return 0;
}

int cmd_explain(const std::string& checkpoint_path, const std::string& data_dir,
                const std::string& complex_id, const std::string& model_id,
                const std::string& out_dir) {
    auto model = load_model(checkpoint_path);
    auto container = DatasetContainer::open(data_dir);
    validate_container_vs_model(container, model.cfg.model);
    const ManifestRecord* rec = nullptr;
    for (const auto& r : container.records())
        if (r.complex_id == complex_id && r.model_id == model_id) rec = &r;
    if (!rec)
        throw DataError("sample (" + complex_id + ", " + model_id + ") not found in " +
                        data_dir);
    auto sample = container.read_sample(*rec);

    ModelAttention attention;
    auto binding = score_sample(sample, model.params, &attention);
    std::cout << "score " << fmt_score(binding.score) << " for (" << complex_id << ", "
              << model_id << ")\n";

    std::filesystem::create_directories(out_dir);
    const auto& spec = model.cfg.model.spec;
    const size_t grid = model.cfg.model.vim.grid();
    const size_t a = model.cfg.model.vim.image_size;
    const size_t cls = model.cfg.model.vim.tokens() / 2;
    const bool named_channels = model.cfg.model.vim.channels == channel_names().size();
    for (size_t g = 0; g < kGroupCount; ++g) {
        auto relevance = token_relevance(attention.branch_stacks[g], cls);
        auto map = build_pixel_map(spec.groups[g].name, relevance, grid);
        {
            std::ofstream csv(std::filesystem::path(out_dir) /
                                  ("relevance_" + spec.groups[g].name + ".csv"),
                              std::ios::trunc);
            csv << relevance_csv(map, relevance);
        }
        for (size_t ch : spec.groups[g].channels) {
            const std::string cname =
                named_channels ? channel_names()[ch] : "ch" + std::to_string(ch);
            Tensor channel = Tensor::from_data(
                {a, a}, std::vector<float>(sample.image.data() + ch * a * a,
                                           sample.image.data() + (ch + 1) * a * a));
            export_overlay(map, channel,
                           std::filesystem::path(out_dir) /
                               ("overlay_" + spec.groups[g].name + "_" + cname + ".ppm"));
            export_graymap(channel, std::filesystem::path(out_dir) /
                                        ("channel_" + cname + ".pgm"));
        }
    }
    auto importance = feature_importance(attention.final_stack, kGroupCount / 2);
    std::array<std::string, 5> names;
    for (size_t g = 0; g < kGroupCount; ++g) names[g] = spec.groups[g].name;
    {
        std::ofstream csv(std::filesystem::path(out_dir) / "feature_importance.csv",
                          std::ios::trunc);
        csv << importance_csv(importance, names);
    }
    std::cout << "explanations written to " << out_dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"PuMba: protein-protein interface scoring with a bidirectional "
                 "selective-state-space encoder"};
    app.require_subcommand(1);

    std::string config_path, out, data_dir, log_path, resume, checkpoint_path;
    std::string scores_path, complex_id, model_id, k_list, capri_k_list;
    uint64_t seed = 0;
    bool seed_set = false;
    double threshold = 0.5;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "JSON config file");
        cmd->add_option("--seed", seed, "RNG seed override")->each([&](const std::string&) {
            seed_set = true;
        });
    };

    auto* gen = app.add_subcommand("gen-synthetic", "generate a synthetic dataset container");
    add_common(gen);
    gen->add_option("--out", out, "output container directory")->required();
    size_t g_complexes = 0, g_decoys = 0, g_imgsize = 0, g_channels = 0;
    double g_signal = -1, g_noise = -1;
    gen->add_option("--complexes", g_complexes, "number of complexes");
    gen->add_option("--decoys", g_decoys, "decoys per complex");
    gen->add_option("--image-size", g_imgsize, "image side length");
    gen->add_option("--channels", g_channels, "feature channels");
    gen->add_option("--signal", g_signal, "planted signal strength in [0,1]");
    gen->add_option("--noise", g_noise, "noise level");

    auto* train = app.add_subcommand("train", "train a model on a container");
    add_common(train);
    train->add_option("--data", data_dir, "dataset container")->required();
    train->add_option("--out", out, "checkpoint output path");
    train->add_option("--log", log_path, "training-log CSV path");
    train->add_option("--resume", resume, "checkpoint to resume from");
    size_t t_steps = 0;
    double t_lr = -1, t_wd = -1, t_wbce = -1, t_wsup = -1, t_wrank = -1, t_tau = -1,
           t_margin = -1;
    size_t t_batch_cplx = 0, t_decoys = 0;
    train->add_option("--steps", t_steps, "optimization steps");
    train->add_option("--lr", t_lr, "learning rate");
    train->add_option("--wd", t_wd, "weight decay");
    train->add_option("--w-bce", t_wbce, "BCE weight");
    train->add_option("--w-supcon", t_wsup, "contrastive weight");
    train->add_option("--w-rank", t_wrank, "ranking weight");
    train->add_option("--tau", t_tau, "contrastive temperature");
    train->add_option("--margin", t_margin, "ranking margin");
    train->add_option("--batch-complexes", t_batch_cplx, "complexes per batch");
    train->add_option("--decoys-per-complex", t_decoys, "decoys per complex per batch");

    auto* score = app.add_subcommand("score", "score every sample in a container");
    add_common(score);
    score->add_option("--checkpoint", checkpoint_path, "trained checkpoint")->required();
    score->add_option("--data", data_dir, "dataset container")->required();
    score->add_option("--out", out, "scores CSV path (stdout when omitted)");

    auto* eval = app.add_subcommand("eval", "evaluate a scores CSV against a container");
    add_common(eval);
    eval->add_option("--scores", scores_path, "scores CSV from `score`")->required();
    eval->add_option("--data", data_dir, "dataset container with labels")->required();
    eval->add_option("--out", out, "directory for metrics.txt / metrics.csv");
    eval->add_option("--k-list", k_list, "success-rate ks, comma separated");
    eval->add_option("--capri-k-list", capri_k_list, "CAPRI-count ks, comma separated");
    eval->add_option("--threshold", threshold, "classification threshold")->capture_default_str();
    bool threshold_set = false;
    eval->get_option("--threshold")->each([&](const std::string&) { threshold_set = true; });

    auto* explain = app.add_subcommand("explain", "export attention overlays for one sample");
    add_common(explain);
    explain->add_option("--checkpoint", checkpoint_path, "trained checkpoint")->required();
    explain->add_option("--data", data_dir, "dataset container")->required();
    explain->add_option("--complex", complex_id, "complex id")->required();
    explain->add_option("--model", model_id, "model id")->required();
    explain->add_option("--out", out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);  // exit 0 with usage
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;  // unknown flags and bad values are configuration errors
    }

    try {
        RunConfig cfg;
        if (!config_path.empty()) cfg = load_config(config_path);
        if (seed_set) {
            cfg.train.seed = seed;
            cfg.synth.seed = seed;
        }

        if (gen->parsed()) {
            if (g_complexes) cfg.synth.complexes = g_complexes;
            if (g_decoys) cfg.synth.decoys_per_complex = g_decoys;
            if (g_imgsize) cfg.synth.image_size = g_imgsize;
            if (g_channels) cfg.synth.channels = g_channels;
            if (g_signal >= 0) cfg.synth.signal = g_signal;
            if (g_noise >= 0) cfg.synth.noise = g_noise;
            return cmd_gen_synthetic(cfg, out);
        }
        if (train->parsed()) {
            if (t_steps) cfg.train.steps = t_steps;
            if (t_lr >= 0) cfg.train.opt.lr = t_lr;
            if (t_wd >= 0) cfg.train.opt.weight_decay = t_wd;
            if (t_wbce >= 0) cfg.train.weights.w_bce = t_wbce;
            if (t_wsup >= 0) cfg.train.weights.w_supcon = t_wsup;
            if (t_wrank >= 0) cfg.train.weights.w_rank = t_wrank;
            if (t_tau >= 0) cfg.train.weights.temperature = t_tau;
            if (t_margin >= 0) cfg.train.weights.margin = t_margin;
            if (t_batch_cplx) cfg.train.batch_complexes = t_batch_cplx;
            if (t_decoys) cfg.train.decoys_per_complex = t_decoys;
            return cmd_train(cfg, data_dir, out.empty() ? "model.ckpt" : out, log_path,
                             resume);
        }
        if (score->parsed()) return cmd_score(checkpoint_path, data_dir, out);
        if (eval->parsed()) {
            if (!k_list.empty()) cfg.eval.success_ks = parse_k_list(k_list);
            if (!capri_k_list.empty()) cfg.eval.capri_ks = parse_k_list(capri_k_list);
            if (threshold_set) cfg.eval.threshold = threshold;
            return cmd_eval(cfg, scores_path, data_dir, out);
        }
        if (explain->parsed())
            return cmd_explain(checkpoint_path, data_dir, complex_id, model_id, out);
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const MetricError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
