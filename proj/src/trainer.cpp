#include "aseg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "aseg/ops.hpp"
#include "aseg/serialize.hpp"

namespace fs = std::filesystem;
namespace op = aseg::ops;

namespace aseg::train {

void TrainConfig::validate() const {
    if (lr <= 0.0) throw std::invalid_argument("TrainConfig: lr must be > 0");
    if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (num_classes < 1) throw std::invalid_argument("TrainConfig: num_classes must be >= 1");
    if (toggles.count() == 0)
        throw std::invalid_argument("TrainConfig: at least one loss must be enabled");
}

// ---------------------------------------------------------------- Pipeline

Pipeline::Pipeline(const TrainConfig& config, int image_h, int image_w)
    : cfg(config),
      image_encoder(mix_seed(config.seed, 101)),
      prompt_encoder(config.num_classes, image_h / 4, image_w / 4, mix_seed(config.seed, 102),
                     prompt::DiffusionConfig{50, false, config.diffusion_enabled}),
      decoder(mix_seed(config.seed, 103)),
      teacher(config.num_classes, image_h / 4, image_w / 4, mix_seed(config.seed, 104)),
      he(image_h / 4),
      we(image_w / 4) {
    cfg.validate();
    if (image_h % 4 != 0 || image_w % 4 != 0)
        throw std::invalid_argument("Pipeline: image sides must be divisible by 4");
    pe = enc::positional_encoding(he, we, enc::kEmbedChannels);
    if (cfg.prompt_mode == PromptMode::kBox)
        box_encoder = std::make_unique<enc::BoxEncoder>(enc::kEmbedChannels,
                                                        mix_seed(config.seed, 105));
}

prompt::PromptEmbeddings Pipeline::student_prompts(
    const Tensor& f_i, const std::vector<prompt::ClassPrompt>& classes, prompt::Mode mode,
    Rng& rng) {
    prompt::PromptEmbeddings emb = prompt_encoder.encode_prompts(f_i, classes, mode, rng);
    // disabled branch contributes a zero (constant) embedding
    if (cfg.branch_mode == BranchMode::kDense) emb.sparse = Tensor(emb.sparse.shape());
    if (cfg.branch_mode == BranchMode::kSparse) emb.dense = Tensor(emb.dense.shape());
    return emb;
}

prompt::PromptEmbeddings Pipeline::box_prompts(const std::vector<enc::BoxPrompt>& boxes) {
    if (!box_encoder) throw std::logic_error("Pipeline: box prompts need prompt_mode=box");
    prompt::PromptEmbeddings emb;
    emb.sparse = box_encoder->encode(boxes, pe, 4);
    // box prompts are class-agnostic: paint the shared convention's channel 0
    emb.dense = Tensor({(int)boxes.size(), enc::kEmbedChannels, he, we});
    for (int n = 0; n < (int)boxes.size(); ++n)
        enc::paint_box_channel(emb.dense, n, 0, boxes[n], 4, enc::kPromptPaintAmplitude);
    return emb;
}

std::vector<Parameter*> Pipeline::trainable_parameters() {
    std::vector<Parameter*> out;
    for (Parameter* p : prompt_encoder.parameters()) out.push_back(p);
    for (Parameter* p : decoder.parameters()) out.push_back(p);
    if (box_encoder)
        for (Parameter* p : box_encoder->parameters()) out.push_back(p);
    for (Parameter* p : weights.parameters()) out.push_back(p);
    return out;
}

std::vector<const Parameter*> Pipeline::all_parameters() const {
    std::vector<const Parameter*> out;
    for (const Parameter* p : image_encoder.parameters()) out.push_back(p);
    for (const Parameter* p : teacher.parameters()) out.push_back(p);
    auto* self = const_cast<Pipeline*>(this);
    for (Parameter* p : self->trainable_parameters()) out.push_back(p);
    return out;
}

std::vector<Parameter*> Pipeline::all_parameters_mut() {
    std::vector<Parameter*> out = trainable_parameters();
    return out;
}

// ----------------------------------------------------------------- Trainer

Trainer::Trainer(Pipeline& pipe, const TrainConfig& cfg)
    : pipe_(pipe),
      cfg_(cfg),
      opt_(optim::AdamWConfig{cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay}),
      sched_(cfg.lr, cfg.plateau_factor, cfg.plateau_patience, cfg.plateau_min_delta),
      rng_(mix_seed(cfg.seed, 0x7121)) {
    cfg_.validate();
}

Tensor Trainer::batch_masks(const std::vector<phantom::PhantomSample>& data,
                            const std::vector<std::pair<int, int>>& batch) const {
    const int h = pipe_.he * 4, w = pipe_.we * 4;
    Tensor out({(int)batch.size(), 1, h, w});
    for (size_t i = 0; i < batch.size(); ++i) {
        const metrics::BinaryMask& m = data[batch[i].first].masks[batch[i].second];
        for (int64_t j = 0; j < (int64_t)h * w; ++j)
            out.data()[(int64_t)i * h * w + j] = (float)m.grid[j];
    }
    return out;
}

Tensor Trainer::encode_cached(const std::vector<phantom::PhantomSample>& data,
                              const std::vector<std::pair<int, int>>& batch) {
    const int c = enc::kEmbedChannels;
    const int64_t plane = (int64_t)c * pipe_.he * pipe_.we;
    Tensor out({(int)batch.size(), c, pipe_.he, pipe_.we});
    for (size_t i = 0; i < batch.size(); ++i) {
        const Tensor& img = data[batch[i].first].image;
        const auto* bytes = reinterpret_cast<const unsigned char*>(img.data());
        uint64_t key = 1469598103934665603ull;  // FNV-1a over the raw float bits
        for (int64_t b = 0; b < img.size() * (int64_t)sizeof(float); ++b) {
            key ^= bytes[b];
            key *= 1099511628211ull;
        }
        auto it = fi_cache_.find(key);
        if (it == fi_cache_.end()) {
            NoGradGuard ng;
            Tensor one({1, img.dim(0), img.dim(1), img.dim(2)});
            std::copy(img.data(), img.data() + img.size(), one.data());
            Tensor f = pipe_.image_encoder.encode(one);
            it = fi_cache_.emplace(key, std::vector<float>(f.data(), f.data() + plane)).first;
        }
        std::copy(it->second.begin(), it->second.end(), out.data() + (int64_t)i * plane);
    }
    return out;
}

losses::LossReport Trainer::train_step(const std::vector<phantom::PhantomSample>& data,
                                       const std::vector<std::pair<int, int>>& batch,
                                       Rng& rng) {
    const int h = pipe_.he * 4, w = pipe_.we * 4;
    Tensor gt = batch_masks(data, batch);
    Tensor f_i = encode_cached(data, batch);

    std::vector<int> class_ids;
    std::vector<enc::BoxPrompt> boxes;
    for (const auto& [si, ci] : batch) {
        class_ids.push_back(data[si].class_ids[ci]);
        boxes.push_back(enc::mask_bbox(data[si].masks[ci]));
    }

    prompt::PromptEmbeddings emb;
    if (pipe_.cfg.prompt_mode == PromptMode::kBox) {
        emb = pipe_.box_prompts(boxes);
    } else {
        std::vector<prompt::ClassPrompt> prompts;
        for (int cid : class_ids)
            prompts.push_back(prompt::ClassPrompt::make(cid, cfg_.num_classes));
        emb = pipe_.student_prompts(f_i, prompts, prompt::Mode::kTrain, rng);
    }

    Tensor logits = pipe_.decoder.decode(f_i, pipe_.pe, emb);
    Tensor prob = op::sigmoid(logits);

    losses::LossReport report;
    std::vector<std::pair<std::string, Tensor>> members;
    if (cfg_.toggles.mse && pipe_.cfg.prompt_mode == PromptMode::kClass) {
        prompt::PromptEmbeddings target = pipe_.teacher.embeddings_for(boxes, class_ids, h, w);
        auto [mse_s, mse_d] = losses::mse_distill(emb, target);
        if (pipe_.cfg.branch_mode != BranchMode::kDense) members.emplace_back("mse_s", mse_s);
        if (pipe_.cfg.branch_mode != BranchMode::kSparse) members.emplace_back("mse_d", mse_d);
    }
    if (cfg_.toggles.dc) members.emplace_back("dice", losses::dice_loss(prob, gt));
    if (cfg_.toggles.ce) members.emplace_back("ce", losses::ce_loss(prob, gt));
    if (cfg_.toggles.sd) {
        bool degen = false;
        Tensor sd = losses::shape_distance_loss(prob, gt, &degen);
        members.emplace_back("sd", sd);
        report.sd_degenerate = degen;
    }

    Tensor total = losses::uncertainty_aggregate(members, pipe_.weights, report,
                                                 cfg_.joint_optimization);
    if (!std::isfinite(report.total) || !total.all_finite()) {
        nlohmann::json dump;
        dump["report"] = report.to_json(-1);
        nlohmann::json bj = nlohmann::json::array();
        for (const auto& [si, ci] : batch) bj.push_back({{"sample", si}, {"class_pos", ci}});
        dump["batch"] = bj;
        throw NumericAbort("non-finite training loss", dump);
    }

    std::vector<Parameter*> params = pipe_.trainable_parameters();
    opt_.zero_grad(params);
    total.backward();
    opt_.step(params);
    return report;
}

TrainResult Trainer::fit(const std::vector<phantom::PhantomSample>& train_set,
                         const std::vector<phantom::PhantomSample>& val_set,
                         const StepCallback& on_step, const EpochCallback& on_epoch) {
    if (train_set.empty()) throw std::invalid_argument("fit: empty training set");
    TrainResult result;
    for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
        std::vector<int> order(train_set.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = (int)i;
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[rng_.uniform_int(0, (int)i - 1)]);

        double total_sum = 0.0;
        int steps = 0;
        losses::LossReport last;
        for (size_t start = 0; start < order.size(); start += (size_t)cfg_.batch_size) {
            std::vector<std::pair<int, int>> batch;
            size_t end = std::min(order.size(), start + (size_t)cfg_.batch_size);
            for (size_t i = start; i < end; ++i) {
                int si = order[i];
                int ci = rng_.uniform_int(0, (int)train_set[si].masks.size() - 1);
                batch.emplace_back(si, ci);
            }
            try {
                last = train_step(train_set, batch, rng_);
            } catch (NumericAbort& e) {
                e.dump["epoch"] = epoch;
                throw;
            }
            total_sum += last.total;
            steps += 1;
            if (on_step) on_step(epoch, steps - 1, last);
        }

        EpochLog log;
        log.epoch = epoch;
        log.mean_total = total_sum / std::max(steps, 1);
        log.last_step = last;
        log.val = evaluate(val_set);
        double new_lr = sched_.observe(log.val.mean_dsc_pct);
        opt_.set_lr(new_lr);
        log.lr = new_lr;
        if (on_epoch) on_epoch(log);
        result.epochs.push_back(log);

        if (cfg_.stop_dsc >= 0.0 && cfg_.stop_nsd >= 0.0 &&
            log.val.mean_dsc_pct >= cfg_.stop_dsc && log.val.mean_nsd_pct >= cfg_.stop_nsd) {
            result.reached_stop = true;
            break;
        }
    }
    return result;
}

metrics::MetricReport Trainer::evaluate(const std::vector<phantom::PhantomSample>& data,
                                        double tau, int box_offset, bool image_boundary_box) {
    NoGradGuard ng;
    const int h = pipe_.he * 4, w = pipe_.we * 4;
    Rng eval_rng(mix_seed(cfg_.seed, 0xE7A1));

    std::vector<std::pair<int, int>> pairs;
    for (size_t si = 0; si < data.size(); ++si)
        for (size_t ci = 0; ci < data[si].masks.size(); ++ci)
            pairs.emplace_back((int)si, (int)ci);

    std::vector<metrics::BinaryMask> preds, gts;
    std::vector<int> classes;
    for (size_t start = 0; start < pairs.size(); start += (size_t)cfg_.batch_size) {
        std::vector<std::pair<int, int>> batch(
            pairs.begin() + start,
            pairs.begin() + std::min(pairs.size(), start + (size_t)cfg_.batch_size));
        Tensor f_i = encode_cached(data, batch);

        prompt::PromptEmbeddings emb;
        if (pipe_.cfg.prompt_mode == PromptMode::kBox) {
            std::vector<enc::BoxPrompt> boxes;
            for (const auto& [si, ci] : batch) {
                if (image_boundary_box)
                    boxes.push_back(enc::BoxPrompt{0, 0, w - 1, h - 1});
                else
                    boxes.push_back(enc::dilate_box(enc::mask_bbox(data[si].masks[ci]),
                                                    box_offset, h, w));
            }
            emb = pipe_.box_prompts(boxes);
        } else {
            std::vector<prompt::ClassPrompt> prompts;
            for (const auto& [si, ci] : batch)
                prompts.push_back(
                    prompt::ClassPrompt::make(data[si].class_ids[ci], cfg_.num_classes));
            emb = pipe_.student_prompts(f_i, prompts, prompt::Mode::kInfer, eval_rng);
        }

        Tensor logits = pipe_.decoder.decode(f_i, pipe_.pe, emb);
        std::vector<metrics::BinaryMask> bm = mask::binarize(logits);
        for (size_t i = 0; i < batch.size(); ++i) {
            preds.push_back(std::move(bm[i]));
            gts.push_back(data[batch[i].first].masks[batch[i].second]);
            classes.push_back(data[batch[i].first].class_ids[batch[i].second]);
        }
    }
    return metrics::evaluate_batch(preds, gts, classes, tau);
}

// ------------------------------------------------------------- checkpoints

static std::string sanitize(const std::string& name) {
    std::string out = name;
    for (char& c : out)
        if (c == '/') c = '_';
    return out;
}

void Trainer::save_checkpoint(const std::string& dir, int epoch) const {
    fs::create_directories(fs::path(dir) / "params");
    fs::create_directories(fs::path(dir) / "opt");

    nlohmann::json manifest;
    manifest["epoch"] = epoch;
    manifest["lr"] = sched_.lr();
    manifest["rng"] = rng_.state();
    manifest["scheduler"] = {{"best", sched_.best()}, {"bad_epochs", sched_.bad_epochs()}};

    nlohmann::json lambdas = nlohmann::json::object();
    nlohmann::json steps = nlohmann::json::object();
    auto* self = const_cast<Trainer*>(this);
    for (const Parameter* p : self->pipe_.all_parameters()) {
        io::save_tensor((fs::path(dir) / "params" / (sanitize(p->name) + ".atsr")).string(),
                        p->tensor);
        if (p->name.rfind("lambda/", 0) == 0) lambdas[p->name] = p->tensor.data()[0];
    }
    for (const auto& [name, st] : self->opt_.state()) {
        io::save_tensor((fs::path(dir) / "opt" / (sanitize(name) + ".m.atsr")).string(),
                        Tensor::from_data({(int)st.m.size()}, st.m));
        io::save_tensor((fs::path(dir) / "opt" / (sanitize(name) + ".v.atsr")).string(),
                        Tensor::from_data({(int)st.v.size()}, st.v));
        steps[name] = st.step;
    }
    manifest["lambda"] = lambdas;
    manifest["opt_steps"] = steps;

    std::ofstream f(fs::path(dir) / "manifest.json");
    f << manifest.dump(2) << "\n";
}

int Trainer::load_checkpoint(const std::string& dir) {
    std::ifstream f(fs::path(dir) / "manifest.json");
    if (!f) throw std::runtime_error("load_checkpoint: missing manifest in " + dir);
    nlohmann::json manifest = nlohmann::json::parse(f);

    // lambda parameters may not exist yet (created lazily on first step)
    for (const auto& [name, value] : manifest["lambda"].items()) {
        (void)value;
        pipe_.weights.ensure(name.substr(std::string("lambda/").size()));
    }
    for (Parameter* p : pipe_.trainable_parameters()) {
        fs::path path = fs::path(dir) / "params" / (sanitize(p->name) + ".atsr");
        if (!fs::exists(path))
            throw std::runtime_error("load_checkpoint: missing blob for " + p->name);
        Tensor t = io::load_tensor(path.string());
        if (t.shape() != p->tensor.shape())
            throw ShapeError("load_checkpoint: shape mismatch for " + p->name + ": " +
                             shape_str(t.shape()) + " vs " + shape_str(p->tensor.shape()));
        p->tensor.vec() = t.vec();
    }

    opt_.state().clear();
    for (const auto& [name, step] : manifest["opt_steps"].items()) {
        optim::AdamW::Moments st;
        st.m = io::load_tensor((fs::path(dir) / "opt" / (sanitize(name) + ".m.atsr")).string()).vec();
        st.v = io::load_tensor((fs::path(dir) / "opt" / (sanitize(name) + ".v.atsr")).string()).vec();
        st.step = step.get<int64_t>();
        opt_.state()[name] = std::move(st);
    }

    double lr = manifest["lr"].get<double>();
    sched_.restore(lr, manifest["scheduler"]["best"].get<double>(),
                   manifest["scheduler"]["bad_epochs"].get<int>());
    opt_.set_lr(lr);
    rng_.set_state(manifest["rng"].get<std::string>());
    return manifest["epoch"].get<int>();
}

// ------------------------------------------------------ studies & tables

uint64_t dataset_hash(const std::vector<phantom::PhantomSample>& data) {
    uint64_t h = 1469598103934665603ULL;  // FNV-1a
    auto mix = [&](uint64_t v) {
        h ^= v;
        h *= 1099511628211ULL;
    };
    for (const auto& s : data) {
        for (int64_t i = 0; i < s.image.size(); ++i) {
            uint32_t bits;
            std::memcpy(&bits, &s.image.data()[i], sizeof bits);
            mix(bits);
        }
        for (size_t m = 0; m < s.masks.size(); ++m) {
            mix((uint64_t)s.class_ids[m]);
            for (uint8_t b : s.masks[m].grid) mix(b);
        }
    }
    return h;
}

std::vector<AblationRow> run_ablation(const TrainConfig& base,
                                      const std::vector<phantom::PhantomSample>& train_set,
                                      const std::vector<phantom::PhantomSample>& val_set,
                                      const std::vector<AblationDelta>& grid) {
    if (train_set.empty()) throw std::invalid_argument("run_ablation: empty training set");
    const int h = train_set[0].image.dim(1), w = train_set[0].image.dim(2);
    const uint64_t hash = dataset_hash(train_set);
    std::vector<AblationRow> rows;
    for (const auto& delta : grid) {
        TrainConfig cfg = base;
        delta.apply(cfg);
        cfg.validate();
        Pipeline pipe(cfg, h, w);
        Trainer trainer(pipe, cfg);
        trainer.fit(train_set, val_set);
        AblationRow row;
        row.label = delta.label;
        row.report = trainer.evaluate(val_set);
        row.data_hash = hash;
        rows.push_back(std::move(row));
    }
    return rows;
}

std::vector<OffsetRow> box_offset_study(Trainer& trainer,
                                        const std::vector<phantom::PhantomSample>& val_set,
                                        const std::vector<int>& offsets,
                                        bool include_image_boundary) {
    std::vector<OffsetRow> rows;
    for (int off : offsets) {
        OffsetRow row;
        row.label = std::to_string(off);
        row.offset = off;
        row.report = trainer.evaluate(val_set, 2.0, off, false);
        rows.push_back(std::move(row));
    }
    if (include_image_boundary) {
        OffsetRow row;
        row.label = "IB";
        row.image_boundary = true;
        row.report = trainer.evaluate(val_set, 2.0, 0, true);
        rows.push_back(std::move(row));
    }
    return rows;
}

nlohmann::json EpochLog::to_json() const {
    return {{"epoch", epoch},
            {"mean_total", mean_total},
            {"lr", lr},
            {"val", val.to_json()},
            {"last_step", last_step.to_json(epoch)}};
}

static std::string fmt_row(const std::string& label, double dsc, double nsd) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%-16s %10.3f %10.3f\n", label.c_str(), dsc, nsd);
    return buf;
}

std::string format_ablation_table(const std::vector<AblationRow>& rows) {
    std::string out = "Variant               DSC(%)     NSD(%)\n";
    for (const auto& r : rows)
        out += fmt_row(r.label, r.report.mean_dsc_pct, r.report.mean_nsd_pct);
    return out;
}

std::string format_offset_table(const std::vector<OffsetRow>& rows) {
    std::string out = "Box Offset(pixel)     DSC(%)     NSD(%)\n";
    for (const auto& r : rows)
        out += fmt_row(r.label, r.report.mean_dsc_pct, r.report.mean_nsd_pct);
    return out;
}

nlohmann::json ablation_json(const std::vector<AblationRow>& rows) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& r : rows)
        out.push_back({{"label", r.label},
                       {"data_hash", r.data_hash},
                       {"report", r.report.to_json()}});
    return out;
}

nlohmann::json offset_json(const std::vector<OffsetRow>& rows) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& r : rows)
        out.push_back({{"label", r.label},
                       {"image_boundary", r.image_boundary},
                       {"report", r.report.to_json()}});
    return out;
}

}  // namespace aseg::train
