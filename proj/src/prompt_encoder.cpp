#include "aseg/prompt_encoder.hpp"

#include <cmath>
#include <stdexcept>

#include "aseg/encoders.hpp"
#include "aseg/ops.hpp"

namespace op = aseg::ops;

namespace aseg::prompt {

ClassPrompt ClassPrompt::make(int class_id, int num_classes) {
    if (class_id < 0 || class_id >= num_classes)
        throw std::invalid_argument("ClassPrompt: class_id out of range");
    ClassPrompt c;
    c.class_id = class_id;
    c.one_hot = Tensor({num_classes});
    c.one_hot.data()[class_id] = 1.0f;
    return c;
}

void DiffusionConfig::validate() const {
    if (total_steps < 1) throw std::invalid_argument("DiffusionConfig: T must be >= 1");
}

double noise_schedule(int t) {
    if (t < 0) throw std::invalid_argument("noise_schedule: t must be >= 0");
    return 1.0 / (double)(t + 1);
}

DiffusionPromptEncoder::DiffusionPromptEncoder(int num_classes, int he, int we,
                                               uint64_t seed, DiffusionConfig cfg)
    : num_classes_(num_classes), he_(he), we_(we), cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    const int c = enc::kEmbedChannels;
    auto add = [&](const char* name, Shape shape, int fan_in) {
        params_.emplace_back(std::string("prompt_encoder/") + name,
                             enc::he_normal(std::move(shape), fan_in, rng));
    };
    auto add_zero = [&](const char* name, Shape shape) {
        params_.emplace_back(std::string("prompt_encoder/") + name, Tensor(std::move(shape)));
    };
    add("class_proj/w", {num_classes, he * we}, num_classes);
    add_zero("class_proj/b", {he * we});

    add("enc1/w", {c, c, 3, 3}, c * 9);
    add_zero("enc1/b", {c});
    add("enc2/w", {c, c, 3, 3}, c * 9);
    add_zero("enc2/b", {c});
    add("enc3/w", {c, c, 3, 3}, c * 9);
    add_zero("enc3/b", {c});

    for (const char* br : {"dense", "sparse"}) {
        std::string b = br;
        auto name = [&](const char* s) {
            static std::string tmp;
            tmp = b + "/" + s;
            return tmp.c_str();
        };
        // attention over concat(F_enc3, c_p): 33 -> 32 channels
        int ak = b == "dense" ? 3 : 1;
        add(name("att/w"), {c, c + 1, ak, ak}, (c + 1) * ak * ak);
        add_zero(name("att/b"), {c});
        // decoder: up to 8x8, merge skip enc1, up to 16x16, merge skip F_t
        add(name("up1/w"), {c, c, 2, 2}, c * 4);
        add_zero(name("up1/b"), {c});
        add(name("mix1/w"), {c, 2 * c, 3, 3}, 2 * c * 9);
        add_zero(name("mix1/b"), {c});
        add(name("up2/w"), {c, c, 2, 2}, c * 4);
        add_zero(name("up2/b"), {c});
        add(name("mix2/w"), {c, 2 * c, 3, 3}, 2 * c * 9);
        add_zero(name("mix2/b"), {c});
        add(name("head/w"), {c, c, 1, 1}, c);
        add_zero(name("head/b"), {c});
    }
    // sparse token head: pooled C -> 2 tokens of width C
    add("token/w", {c, 2 * c}, c);
    add_zero("token/b", {2 * c});
}

Parameter& DiffusionPromptEncoder::p(const char* name) {
    std::string full = std::string("prompt_encoder/") + name;
    for (auto& prm : params_)
        if (prm.name == full) return prm;
    throw std::logic_error("DiffusionPromptEncoder: unknown parameter " + full);
}

Tensor DiffusionPromptEncoder::project_class(const std::vector<ClassPrompt>& classes) {
    const int batch = (int)classes.size();
    Tensor one_hots({batch, num_classes_});
    for (int n = 0; n < batch; ++n) {
        if (classes[n].one_hot.dim(0) != num_classes_)
            throw ShapeError("project_class: one-hot width does not match K");
        for (int k = 0; k < num_classes_; ++k)
            one_hots.data()[(int64_t)n * num_classes_ + k] = classes[n].one_hot.data()[k];
    }
    Tensor proj = op::linear(one_hots, p("class_proj/w").tensor, p("class_proj/b").tensor);
    return op::reshape(proj, {batch, 1, he_, we_});
}

Tensor DiffusionPromptEncoder::forward_diffuse(const Tensor& f_i, const Tensor& c_expand,
                                               int t, Rng& rng) const {
    if (!cfg_.enabled) return f_i;
    double sigma = noise_schedule(t);
    double std = cfg_.variance_mode ? std::sqrt(sigma) : sigma;
    Tensor noise(f_i.shape());
    for (int64_t i = 0; i < noise.size(); ++i) noise.data()[i] = (float)rng.normal(0.0, std);
    return op::add_plane(op::add(f_i, noise), c_expand);
}

std::vector<Tensor> DiffusionPromptEncoder::encode_features(const Tensor& f_t) {
    Tensor e1 = op::relu(op::conv2d(f_t, p("enc1/w").tensor, p("enc1/b").tensor, 2, 1));
    Tensor e2 = op::relu(op::conv2d(e1, p("enc2/w").tensor, p("enc2/b").tensor, 2, 1));
    Tensor e3 = op::relu(op::conv2d(e2, p("enc3/w").tensor, p("enc3/b").tensor, 1, 1));
    return {e1, e2, e3};
}

namespace {
// c_p resized to the deepest level by average pooling
Tensor pool_class_map(const Tensor& c_p, int target_h) {
    int factor = c_p.dim(2) / target_h;
    return factor > 1 ? op::avg_pool2d(c_p, factor) : c_p;
}
}  // namespace

Tensor DiffusionPromptEncoder::dense_branch(const Tensor& f_t,
                                            const std::vector<Tensor>& feats,
                                            const Tensor& c_p,
                                            const Tensor* gate_override) {
    const Tensor& deep = feats.back();
    Tensor cp = pool_class_map(c_p, deep.dim(2));
    Tensor att_in = op::concat_channels(deep, cp);
    Tensor gate =
        gate_override
            ? *gate_override
            : op::relu(op::conv2d(att_in, p("dense/att/w").tensor, p("dense/att/b").tensor, 1,
                                  p("dense/att/w").tensor.dim(2) / 2));
    Tensor gated = op::mul(deep, gate);
    Tensor u1 = op::relu(
        op::conv_transpose2d(gated, p("dense/up1/w").tensor, p("dense/up1/b").tensor, 2));
    Tensor m1 = op::relu(op::conv2d(op::concat_channels(u1, feats[0]), p("dense/mix1/w").tensor,
                                    p("dense/mix1/b").tensor, 1, 1));
    Tensor u2 =
        op::relu(op::conv_transpose2d(m1, p("dense/up2/w").tensor, p("dense/up2/b").tensor, 2));
    Tensor m2 = op::relu(op::conv2d(op::concat_channels(u2, f_t), p("dense/mix2/w").tensor,
                                    p("dense/mix2/b").tensor, 1, 1));
    return op::conv2d(m2, p("dense/head/w").tensor, p("dense/head/b").tensor, 1, 0);
}

Tensor DiffusionPromptEncoder::sparse_branch(const Tensor& f_t,
                                             const std::vector<Tensor>& feats,
                                             const Tensor& c_p,
                                             const Tensor* gate_override) {
    const Tensor& deep = feats.back();
    Tensor cp = pool_class_map(c_p, deep.dim(2));
    Tensor global = op::adaptive_avg_pool(op::concat_channels(deep, cp));
    Tensor gate = gate_override
                      ? *gate_override
                      : op::sigmoid(op::conv2d(global, p("sparse/att/w").tensor,
                                               p("sparse/att/b").tensor, 1, 0));
    Tensor gated = op::scale_channels(deep, gate);
    Tensor u1 = op::relu(
        op::conv_transpose2d(gated, p("sparse/up1/w").tensor, p("sparse/up1/b").tensor, 2));
    Tensor m1 = op::relu(op::conv2d(op::concat_channels(u1, feats[0]),
                                    p("sparse/mix1/w").tensor, p("sparse/mix1/b").tensor, 1, 1));
    Tensor u2 = op::relu(
        op::conv_transpose2d(m1, p("sparse/up2/w").tensor, p("sparse/up2/b").tensor, 2));
    Tensor m2 = op::relu(op::conv2d(op::concat_channels(u2, f_t), p("sparse/mix2/w").tensor,
                                    p("sparse/mix2/b").tensor, 1, 1));
    Tensor head = op::conv2d(m2, p("sparse/head/w").tensor, p("sparse/head/b").tensor, 1, 0);
    Tensor pooled = op::reshape(op::adaptive_avg_pool(head), {head.dim(0), head.dim(1)});
    Tensor tokens = op::linear(pooled, p("token/w").tensor, p("token/b").tensor);
    return op::reshape(tokens, {head.dim(0), 2, head.dim(1)});
}

PromptEmbeddings DiffusionPromptEncoder::encode_prompts(
    const Tensor& f_i, const std::vector<ClassPrompt>& classes, Mode mode, Rng& rng) {
    Tensor c_expand = project_class(classes);
    int t = mode == Mode::kTrain ? rng.uniform_int(0, cfg_.total_steps - 1)
                                 : cfg_.total_steps - 1;
    Tensor f_t = forward_diffuse(f_i, c_expand, t, rng);
    std::vector<Tensor> feats = encode_features(f_t);
    PromptEmbeddings out;
    out.dense = dense_branch(f_t, feats, c_expand);
    out.sparse = sparse_branch(f_t, feats, c_expand);
    return out;
}

std::vector<Parameter*> DiffusionPromptEncoder::parameters() {
    std::vector<Parameter*> out;
    for (auto& prm : params_) out.push_back(&prm);
    return out;
}

}  // namespace aseg::prompt
