#pragma once

#include <cstdint>
#include <vector>

#include "aseg/metrics.hpp"
#include "aseg/rng.hpp"
#include "aseg/tensor.hpp"

namespace aseg::enc {

constexpr int kEmbedChannels = 32;

// Shared "painted channel" prompt convention: a box prompt for class k is
// rendered into dense embeddings as kPromptPaintAmplitude on channel k over
// the (downscaled) box footprint, zero elsewhere. Teacher targets, box-mode
// prompts, and the mask decoder's initial weights all agree on it, the same
// way a pretrained decoder agrees with its prompt encoder's conventions.
constexpr float kPromptPaintAmplitude = 6.0f;

Tensor he_normal(Shape shape, int fan_in, Rng& rng);

// Frozen random conv stack standing in for a pretrained image encoder:
// three conv+ReLU stages (stride 2, 2, 1), 4x spatial reduction.
class ImageEncoder {
public:
    explicit ImageEncoder(uint64_t seed = 0xA5E60001ULL);
    Tensor encode(const Tensor& image) const;  // [B,3,H,W] -> [B,32,H/4,W/4]
    std::vector<const Parameter*> parameters() const;

private:
    std::vector<Parameter> params_;
};

// Fixed 2D sinusoidal encoding over (row, col); [C,H,W], values in [-1,1].
Tensor positional_encoding(int h, int w, int c);

struct BoxPrompt {
    int x_min = 0, y_min = 0, x_max = 0, y_max = 0;
    void validate(int h, int w) const;
};

BoxPrompt mask_bbox(const metrics::BinaryMask& mask);
BoxPrompt dilate_box(const BoxPrompt& box, int offset, int h, int w);

// Paints `amplitude` on one channel of a [B,C,He,We] dense-embedding tensor
// over a pixel-space box scaled down by `scale`.
void paint_box_channel(Tensor& dense, int n, int channel, const BoxPrompt& box, int scale,
                       float amplitude);

// Corner-token box encoder for the prompt-offset study: each token is the
// positional encoding sampled at a box corner plus a learned per-corner bias.
class BoxEncoder {
public:
    BoxEncoder(int embed_channels, uint64_t seed);
    // pe is [C,He,We] at embedding resolution; boxes are in image pixels and
    // get scaled down by `scale` (the encoder's spatial reduction).
    Tensor encode(const std::vector<BoxPrompt>& boxes, const Tensor& pe, int scale);
    std::vector<Parameter*> parameters();

private:
    Parameter corner_bias_;  // [2*C]
};

}  // namespace aseg::enc
