#include <cstdint>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>
#include <omp.h>

#include "aseg/metrics.hpp"
#include "aseg/phantom.hpp"
#include "aseg/serialize.hpp"
#include "aseg/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitArtifact = 4;

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using Config = std::map<std::string, std::string>;

Config parse_config_text(std::istream& in) {
    Config cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
        auto trim = [](std::string s) {
            auto a = s.find_first_not_of(" \t\r");
            auto b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        std::string key = trim(line.substr(0, eq));
        std::string val = trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
        cfg[key] = val;
    }
    return cfg;
}

Config load_config(const std::string& path, const std::set<std::string>& allowed) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file " + path);
    Config cfg = parse_config_text(f);
    for (const auto& [k, v] : cfg)
        if (!allowed.count(k)) throw ConfigError("unknown config key '" + k + "'");
    return cfg;
}

std::string get(const Config& cfg, const std::string& key, const std::string& dflt) {
    auto it = cfg.find(key);
    return it == cfg.end() ? dflt : it->second;
}

int geti(const Config& cfg, const std::string& key, int dflt) {
    auto it = cfg.find(key);
    return it == cfg.end() ? dflt : std::stoi(it->second);
}

double getd(const Config& cfg, const std::string& key, double dflt) {
    auto it = cfg.find(key);
    return it == cfg.end() ? dflt : std::stod(it->second);
}

uint64_t getu(const Config& cfg, const std::string& key, uint64_t dflt) {
    auto it = cfg.find(key);
    return it == cfg.end() ? dflt : std::stoull(it->second);
}

bool getb(const Config& cfg, const std::string& key, bool dflt) {
    auto it = cfg.find(key);
    if (it == cfg.end()) return dflt;
    if (it->second == "1" || it->second == "true") return true;
    if (it->second == "0" || it->second == "false") return false;
    throw ConfigError("config key '" + key + "': expected boolean, got '" + it->second + "'");
}

uint64_t fnv1a(const std::string& s) {
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

void write_manifest(const std::string& command, const std::string& config_path,
                    const Config& cfg, const std::string& out_dir) {
    json snapshot = json::object();
    std::string flat;
    for (const auto& [k, v] : cfg) {
        snapshot[k] = v;
        flat += k + "=" + v + "\n";
    }
    char hash[32];
    std::snprintf(hash, sizeof hash, "%016llx",
                  (unsigned long long)fnv1a(command + "\n" + flat));
    json m = {{"command", command},
              {"config_path", config_path},
              {"config", snapshot},
              {"content_hash", hash},
              {"out_dir", out_dir},
              {"timestamp", (int64_t)std::time(nullptr)}};
    fs::create_directories(out_dir);
    std::ofstream f(fs::path(out_dir) / "manifest.json");
    f << m.dump(2) << "\n";
}

const std::set<std::string> kGenKeys = {"n",        "h",         "w",    "num_classes",
                                        "contrast", "noise_std", "seed", "symmetric_pair"};
const std::set<std::string> kTrainKeys = {
    "batch_size", "epochs",         "lr",          "weight_decay",       "plateau_factor",
    "plateau_patience", "seed",     "loss_toggles", "joint_optimization", "branch_mode",
    "diffusion_enabled", "prompt_mode", "num_classes", "stop_dsc",        "stop_nsd"};

aseg::train::TrainConfig train_config_from(const Config& cfg) {
    aseg::train::TrainConfig tc;
    tc.batch_size = geti(cfg, "batch_size", tc.batch_size);
    tc.epochs = geti(cfg, "epochs", tc.epochs);
    tc.lr = getd(cfg, "lr", tc.lr);
    tc.weight_decay = getd(cfg, "weight_decay", tc.weight_decay);
    tc.plateau_factor = getd(cfg, "plateau_factor", tc.plateau_factor);
    tc.plateau_patience = geti(cfg, "plateau_patience", tc.plateau_patience);
    tc.seed = getu(cfg, "seed", tc.seed);
    tc.joint_optimization = getb(cfg, "joint_optimization", tc.joint_optimization);
    tc.diffusion_enabled = getb(cfg, "diffusion_enabled", tc.diffusion_enabled);
    tc.num_classes = geti(cfg, "num_classes", tc.num_classes);
    tc.stop_dsc = getd(cfg, "stop_dsc", tc.stop_dsc);
    tc.stop_nsd = getd(cfg, "stop_nsd", tc.stop_nsd);

    std::string toggles = get(cfg, "loss_toggles", "CE,DC,MSE");
    tc.toggles = {};
    tc.toggles.ce = tc.toggles.dc = tc.toggles.sd = tc.toggles.mse = false;
    std::stringstream ss(toggles);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok == "CE")
            tc.toggles.ce = true;
        else if (tok == "DC")
            tc.toggles.dc = true;
        else if (tok == "SD")
            tc.toggles.sd = true;
        else if (tok == "MSE")
            tc.toggles.mse = true;
        else
            throw ConfigError("loss_toggles: unknown member '" + tok + "'");
    }

    std::string branch = get(cfg, "branch_mode", "both");
    if (branch == "dense")
        tc.branch_mode = aseg::train::BranchMode::kDense;
    else if (branch == "sparse")
        tc.branch_mode = aseg::train::BranchMode::kSparse;
    else if (branch == "both")
        tc.branch_mode = aseg::train::BranchMode::kBoth;
    else
        throw ConfigError("branch_mode: expected dense|sparse|both, got '" + branch + "'");

    std::string pm = get(cfg, "prompt_mode", "class");
    if (pm == "class")
        tc.prompt_mode = aseg::train::PromptMode::kClass;
    else if (pm == "box")
        tc.prompt_mode = aseg::train::PromptMode::kBox;
    else
        throw ConfigError("prompt_mode: expected class|box, got '" + pm + "'");

    tc.validate();
    return tc;
}

void save_train_config(const Config& cfg, const std::string& path) {
    std::ofstream f(path);
    for (const auto& [k, v] : cfg) f << k << "=" << v << "\n";
}

Config load_train_config(const std::string& path) { return load_config(path, kTrainKeys); }

std::vector<aseg::phantom::PhantomSample> load_dataset(const std::string& dir) {
    if (!fs::exists(fs::path(dir) / "index.json"))
        throw ConfigError("dataset index not found in " + dir);
    return aseg::phantom::import_dataset(dir);
}

int cmd_gen(const std::string& config_path, const std::string& out, uint64_t seed_override,
            bool has_seed) {
    Config cfg = load_config(config_path, kGenKeys);
    aseg::phantom::PhantomConfig pc;
    pc.h = geti(cfg, "h", pc.h);
    pc.w = geti(cfg, "w", pc.w);
    pc.num_classes = geti(cfg, "num_classes", pc.num_classes);
    pc.contrast = getd(cfg, "contrast", pc.contrast);
    pc.noise_std = getd(cfg, "noise_std", pc.noise_std);
    pc.symmetric_pair = getb(cfg, "symmetric_pair", pc.symmetric_pair);
    pc.seed = getu(cfg, "seed", pc.seed);
    if (has_seed) {
        pc.seed = seed_override;
        cfg["seed"] = std::to_string(seed_override);
    }
    int n = geti(cfg, "n", 10);
    pc.validate();
    auto samples = aseg::phantom::generate(pc, n);
    fs::create_directories(out);
    aseg::phantom::export_dataset(samples, out);
    write_manifest("gen", config_path, cfg, out);
    std::cout << "wrote " << n << " samples to " << out << "\n";
    return kExitOk;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out, uint64_t seed_override, bool has_seed,
              const std::string& resume) {
    Config cfg = load_config(config_path, kTrainKeys);
    if (has_seed) cfg["seed"] = std::to_string(seed_override);
    aseg::train::TrainConfig tc = train_config_from(cfg);

    auto samples = load_dataset(data_dir);
    if (samples.empty()) throw ConfigError("dataset in " + data_dir + " is empty");
    auto [train_set, val_set] = aseg::phantom::split(samples, 0.8);
    const int h = train_set[0].image.dim(1), w = train_set[0].image.dim(2);

    aseg::train::Pipeline pipe(tc, h, w);
    aseg::train::Trainer trainer(pipe, tc);
    if (!resume.empty()) trainer.load_checkpoint(resume);

    fs::create_directories(out);
    write_manifest("train", config_path, cfg, out);
    save_train_config(cfg, (fs::path(out) / "train_config.txt").string());

    std::ofstream log(fs::path(out) / "epochs.jsonl");
    double best_dsc = -1.0;
    auto result = trainer.fit(train_set, val_set, nullptr, [&](const aseg::train::EpochLog& ep) {
        log << ep.to_json().dump() << "\n";
        log.flush();
        if (ep.val.mean_dsc_pct > best_dsc) best_dsc = ep.val.mean_dsc_pct;
    });
    trainer.save_checkpoint((fs::path(out) / "checkpoint").string(),
                            (int)result.epochs.size());
    save_train_config(cfg, (fs::path(out) / "checkpoint" / "train_config.txt").string());
    std::cout << "trained " << result.epochs.size() << " epochs, best val DSC " << best_dsc
              << "\n";
    return kExitOk;
}

std::pair<aseg::train::TrainConfig, Config> checkpoint_config(const std::string& ckpt) {
    fs::path cfg_path = fs::path(ckpt) / "train_config.txt";
    if (!fs::exists(cfg_path))
        throw std::runtime_error("checkpoint " + ckpt + " has no train_config.txt");
    Config cfg = load_train_config(cfg_path.string());
    return {train_config_from(cfg), cfg};
}

int cmd_eval(const std::string& ckpt, const std::string& data_dir, const std::string& out,
             double tau, int class_filter) {
    auto [tc, cfg] = checkpoint_config(ckpt);
    auto samples = load_dataset(data_dir);
    if (samples.empty()) throw ConfigError("dataset in " + data_dir + " is empty");
    const int h = samples[0].image.dim(1), w = samples[0].image.dim(2);

    aseg::train::Pipeline pipe(tc, h, w);
    aseg::train::Trainer trainer(pipe, tc);
    trainer.load_checkpoint(ckpt);
    auto report = trainer.evaluate(samples, tau);

    json rj = report.to_json();
    if (class_filter >= 0) {
        json filtered = json::array();
        for (const auto& row : rj["per_class"])
            if (row["class_id"].get<int>() == class_filter) filtered.push_back(row);
        rj["per_class"] = filtered;
    }
    if (!out.empty()) {
        fs::create_directories(out);
        write_manifest("eval", ckpt, cfg, out);
        std::ofstream f(fs::path(out) / "metrics.json");
        f << rj.dump(2) << "\n";
    }
    std::cout << rj.dump(2) << "\n";
    return kExitOk;
}

int cmd_ablate(const std::string& config_path, const std::string& grid_path,
               const std::string& data_dir, const std::string& out, uint64_t seed_override,
               bool has_seed) {
    Config cfg = load_config(config_path, kTrainKeys);
    if (has_seed) cfg["seed"] = std::to_string(seed_override);
    aseg::train::TrainConfig base = train_config_from(cfg);

    std::ifstream gf(grid_path);
    if (!gf) throw ConfigError("cannot open grid file " + grid_path);
    std::vector<aseg::train::AblationDelta> grid;
    std::string line;
    while (std::getline(gf, line)) {
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::stringstream ss(line);
        std::string label;
        if (!(ss >> label)) continue;
        std::vector<std::pair<std::string, std::string>> kvs;
        std::string kv;
        while (ss >> kv) {
            auto eq = kv.find('=');
            if (eq == std::string::npos)
                throw ConfigError("grid row '" + label + "': expected key=value, got " + kv);
            std::string key = kv.substr(0, eq);
            if (!kTrainKeys.count(key))
                throw ConfigError("grid row '" + label + "': unknown config key '" + key + "'");
            kvs.emplace_back(key, kv.substr(eq + 1));
        }
        grid.push_back({label, [kvs, cfg](aseg::train::TrainConfig& tc) {
                            Config merged = cfg;
                            for (const auto& [k, v] : kvs) merged[k] = v;
                            tc = train_config_from(merged);
                        }});
    }
    if (grid.empty()) throw ConfigError("grid file " + grid_path + " has no rows");

    auto samples = load_dataset(data_dir);
    auto [train_set, val_set] = aseg::phantom::split(samples, 0.8);
    auto rows = aseg::train::run_ablation(base, train_set, val_set, grid);

    std::string table = aseg::train::format_ablation_table(rows);
    if (!out.empty()) {
        fs::create_directories(out);
        write_manifest("ablate", config_path, cfg, out);
        std::ofstream jf(fs::path(out) / "ablation.json");
        jf << aseg::train::ablation_json(rows).dump(2) << "\n";
        std::ofstream tf(fs::path(out) / "ablation.txt");
        tf << table;
    }
    std::cout << table;
    return kExitOk;
}

int cmd_offset(const std::string& ckpt, const std::string& data_dir,
               const std::string& offsets_arg, const std::string& out) {
    auto [tc, cfg] = checkpoint_config(ckpt);
    if (tc.prompt_mode != aseg::train::PromptMode::kBox)
        throw aseg::ShapeError("offset study requires a box-prompt checkpoint");
    auto samples = load_dataset(data_dir);
    const int h = samples[0].image.dim(1), w = samples[0].image.dim(2);

    aseg::train::Pipeline pipe(tc, h, w);
    aseg::train::Trainer trainer(pipe, tc);
    trainer.load_checkpoint(ckpt);

    std::vector<int> offsets;
    bool boundary = false;
    std::stringstream ss(offsets_arg);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok == "IB")
            boundary = true;
        else
            offsets.push_back(std::stoi(tok));
    }
    auto rows = aseg::train::box_offset_study(trainer, samples, offsets, boundary);

    std::string table = aseg::train::format_offset_table(rows);
    if (!out.empty()) {
        fs::create_directories(out);
        write_manifest("offset", ckpt, cfg, out);
        std::ofstream jf(fs::path(out) / "offset.json");
        jf << aseg::train::offset_json(rows).dump(2) << "\n";
        std::ofstream tf(fs::path(out) / "offset.txt");
        tf << table;
    }
    std::cout << table;
    return kExitOk;
}

aseg::metrics::BinaryMask mask_from_pgm(const std::string& path) {
    int h = 0, w = 0;
    std::vector<uint8_t> px = aseg::io::load_pgm(path, h, w);
    aseg::metrics::BinaryMask m(h, w);
    for (size_t i = 0; i < px.size(); ++i) m.grid[i] = px[i] >= 128 ? 1 : 0;
    return m;
}

int cmd_score(const std::string& gt_path, const std::string& pred_path, double tau) {
    aseg::metrics::BinaryMask g = mask_from_pgm(gt_path);
    aseg::metrics::BinaryMask s = mask_from_pgm(pred_path);
    if (g.h != s.h || g.w != s.w)
        throw aseg::ShapeError("score: mask sizes differ");
    char buf[64];
    std::snprintf(buf, sizeof buf, "DSC %.3f NSD %.3f\n", 100.0 * aseg::metrics::dsc(g, s),
                  100.0 * aseg::metrics::nsd(g, s, tau));
    std::cout << buf;
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    if (const char* threads = std::getenv("ASEG_THREADS")) {
        int n = std::atoi(threads);
        if (n > 0) omp_set_num_threads(n);
    }

    CLI::App app{"synthetic-phantom segmentation pipeline"};
    app.require_subcommand(1);

    std::string config_path, out, data_dir, ckpt, resume, grid_path;
    std::string offsets = "0,5,15,30,50,IB";
    std::string gt_path, pred_path;
    uint64_t seed = 0;
    double tau = 2.0;
    int class_filter = -1;

    auto add_seed = [&](CLI::App* c) { return c->add_option("--seed", seed); };

    auto* gen = app.add_subcommand("gen", "generate a phantom dataset");
    gen->add_option("--config", config_path)->required();
    gen->add_option("--out", out)->required();
    add_seed(gen);

    auto* train = app.add_subcommand("train", "train a model");
    train->add_option("--config", config_path)->required();
    train->add_option("--data", data_dir)->required();
    train->add_option("--out", out)->required();
    train->add_option("--resume", resume);
    add_seed(train);

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    eval->add_option("--checkpoint", ckpt)->required();
    eval->add_option("--data", data_dir)->required();
    eval->add_option("--out", out);
    eval->add_option("--tau", tau);
    eval->add_option("--class", class_filter);

    auto* ablate = app.add_subcommand("ablate", "run an ablation grid");
    ablate->add_option("--config", config_path)->required();
    ablate->add_option("--grid", grid_path)->required();
    ablate->add_option("--data", data_dir)->required();
    ablate->add_option("--out", out);
    add_seed(ablate);

    auto* offset = app.add_subcommand("offset", "box-offset study");
    offset->add_option("--checkpoint", ckpt)->required();
    offset->add_option("--data", data_dir)->required();
    offset->add_option("--offsets", offsets);
    offset->add_option("--out", out);

    auto* score = app.add_subcommand("score", "score one mask pair");
    score->add_option("gt", gt_path)->required();
    score->add_option("pred", pred_path)->required();
    score->add_option("--tau", tau);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        std::cerr << e.what() << "\n";
        return kExitConfig;
    }

    try {
        if (gen->parsed()) return cmd_gen(config_path, out, seed, gen->count("--seed") > 0);
        if (train->parsed())
            return cmd_train(config_path, data_dir, out, seed, train->count("--seed") > 0,
                             resume);
        if (eval->parsed()) return cmd_eval(ckpt, data_dir, out, tau, class_filter);
        if (ablate->parsed())
            return cmd_ablate(config_path, grid_path, data_dir, out, seed,
                              ablate->count("--seed") > 0);
        if (offset->parsed()) return cmd_offset(ckpt, data_dir, offsets, out);
        if (score->parsed()) return cmd_score(gt_path, pred_path, tau);
    } catch (const aseg::train::NumericAbort& e) {
        std::cerr << "numeric abort: " << e.what() << "\n" << e.dump.dump(2) << "\n";
        return kExitNumeric;
    } catch (const aseg::ShapeError& e) {
        std::cerr << "incompatible artifact: " << e.what() << "\n";
        return kExitArtifact;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    }
    return kExitOk;
}
