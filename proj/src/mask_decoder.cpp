#include "aseg/mask_decoder.hpp"

#include <cmath>

#include "aseg/encoders.hpp"
#include "aseg/ops.hpp"

namespace op = aseg::ops;

namespace aseg::mask {

MaskDecoder::MaskDecoder(uint64_t seed) {
    Rng rng(seed);
    const int c = enc::kEmbedChannels;
    // A real SAM-style decoder ships *pretrained*, already agreeing with its
    // prompt encoder about what embeddings mean. Stand-in: start from an
    // identity-flavored decoder that decodes the painted-channel prompt
    // convention (see kPromptPaintAmplitude) into an in-box mask, with small
    // random weights on top as refinement capacity. A cold random decoder
    // cannot be trained to read the teacher's convention within the step
    // budget, which stalls distillation-supervised training.
    auto noisy = [&](Shape shape, int fan_in) {
        Tensor t = enc::he_normal(std::move(shape), fan_in, rng);
        for (int64_t i = 0; i < t.size(); ++i) t.data()[i] *= 0.1f;
        return t;
    };
    auto add = [&](const char* name, Tensor t) {
        params_.emplace_back(std::string("mask_decoder/") + name, std::move(t));
    };

    // fuse: identity + noise
    Tensor fuse = noisy({c, c, 1, 1}, c);
    for (int i = 0; i < c; ++i) fuse.data()[(int64_t)i * c + i] += 1.0f;
    add("fuse/w", std::move(fuse));
    add("fuse/b", Tensor({c}));

    add("attn_out/w", noisy({c, c}, c));
    add("attn_out/b", Tensor({c}));

    // up1: per-channel 2x2 unpooling + noise (keeps each channel's map intact)
    Tensor up1 = noisy({c, c, 2, 2}, c);
    for (int i = 0; i < c; ++i)
        for (int k = 0; k < 4; ++k) up1.data()[((int64_t)i * c + i) * 4 + k] += 1.0f;
    add("up1/w", std::move(up1));
    add("up1/b", Tensor({c}));

    // up2: folds channel pairs (2m, 2m+1) -> m while unpooling, so channel k's
    // painted signal lands in output channel k/2 for any class k
    Tensor up2 = noisy({c, c / 2, 2, 2}, c);
    for (int m = 0; m < c / 2; ++m)
        for (int j = 0; j < 2; ++j)
            for (int k = 0; k < 4; ++k)
                up2.data()[((int64_t)(2 * m + j) * (c / 2) + m) * 4 + k] += 1.0f;
    add("up2/w", std::move(up2));
    add("up2/b", Tensor({c / 2}));

    // head: reads the first c/8 folded channels, i.e. paintings for classes
    // k < c/4; larger K still trains but without the warm-start highway
    Tensor head = noisy({1, c / 2, 1, 1}, c / 2);
    for (int m = 0; m < c / 8; ++m) head.data()[m] += 1.0f;
    add("head/w", std::move(head));
    Tensor head_b({1});
    head_b.data()[0] = -enc::kPromptPaintAmplitude;
    add("head/b", std::move(head_b));
}

Parameter& MaskDecoder::p(const char* name) {
    std::string full = std::string("mask_decoder/") + name;
    for (auto& prm : params_)
        if (prm.name == full) return prm;
    throw std::logic_error("MaskDecoder: unknown parameter " + full);
}

Tensor MaskDecoder::decode(const Tensor& f_i, const Tensor& pe,
                           const prompt::PromptEmbeddings& prompts) {
    const int batch = f_i.dim(0), c = f_i.dim(1), he = f_i.dim(2), we = f_i.dim(3);
    if (prompts.dense.shape() != f_i.shape())
        throw ShapeError("MaskDecoder: dense prompt " + shape_str(prompts.dense.shape()) +
                         " vs image embedding " + shape_str(f_i.shape()));
    // broadcast the (constant) positional encoding over the batch
    Tensor pe_b({batch, c, he, we});
    for (int n = 0; n < batch; ++n)
        std::copy(pe.data(), pe.data() + pe.size(), pe_b.data() + (int64_t)n * pe.size());

    Tensor fused = op::add(op::add(f_i, pe_b), prompts.dense);
    fused = op::conv2d(fused, p("fuse/w").tensor, p("fuse/b").tensor, 1, 0);

    // the two sparse tokens attend over spatial positions
    Tensor kv = op::reshape(fused, {batch, c, he * we});  // [B,C,HW]
    Tensor q = prompts.sparse;                            // [B,2,C]
    Tensor scores = op::mul_scalar(op::bmm(q, kv), 1.0f / std::sqrt((float)c));
    Tensor attn = op::softmax_lastdim(scores);            // [B,2,HW]
    Tensor heads = op::bmm(attn, kv, true);               // [B,2,C]
    Tensor merged = op::bmm(Tensor::from_data({batch, 1, 2},
                                              std::vector<float>((size_t)batch * 2, 1.0f)),
                            heads);                     // [B,1,C], token sum
    Tensor tok = op::linear(op::reshape(merged, {batch, c}), p("attn_out/w").tensor,
                            p("attn_out/b").tensor);    // [B,C]
    Tensor tok_map = op::upsample_nearest(op::reshape(tok, {batch, c, 1, 1}), he);
    Tensor mixed = op::add(fused, tok_map);

    Tensor u1 = op::relu(op::conv_transpose2d(mixed, p("up1/w").tensor, p("up1/b").tensor, 2));
    Tensor u2 = op::relu(op::conv_transpose2d(u1, p("up2/w").tensor, p("up2/b").tensor, 2));
    return op::conv2d(u2, p("head/w").tensor, p("head/b").tensor, 1, 0);
}

std::vector<Parameter*> MaskDecoder::parameters() {
    std::vector<Parameter*> out;
    for (auto& prm : params_) out.push_back(&prm);
    return out;
}

std::vector<metrics::BinaryMask> binarize(const Tensor& logits, double threshold) {
    const int batch = logits.dim(0), h = logits.dim(2), w = logits.dim(3);
    std::vector<metrics::BinaryMask> out(batch, metrics::BinaryMask(h, w));
    for (int n = 0; n < batch; ++n)
        for (int64_t i = 0; i < (int64_t)h * w; ++i) {
            double prob = 1.0 / (1.0 + std::exp(-(double)logits.data()[(int64_t)n * h * w + i]));
            out[n].grid[i] = prob > threshold ? 1 : 0;
        }
    return out;
}

}  // namespace aseg::mask
