#include "aseg/encoders.hpp"

#include <cmath>
#include <stdexcept>

#include "aseg/ops.hpp"

namespace aseg::enc {

Tensor he_normal(Shape shape, int fan_in, Rng& rng) {
    Tensor t(shape);
    double std = std::sqrt(2.0 / (double)fan_in);
    for (int64_t i = 0; i < t.size(); ++i) t.data()[i] = (float)rng.normal(0.0, std);
    return t;
}

ImageEncoder::ImageEncoder(uint64_t seed) {
    Rng rng(seed);
    const int c = kEmbedChannels;
    auto frozen = [&](const char* name, Shape shape, int fan_in) {
        params_.emplace_back(name, he_normal(std::move(shape), fan_in, rng), true);
    };
    frozen("image_encoder/conv1/w", {c / 2, 3, 3, 3}, 3 * 9);
    frozen("image_encoder/conv1/b", {c / 2}, 1);
    frozen("image_encoder/conv2/w", {c, c / 2, 3, 3}, c / 2 * 9);
    frozen("image_encoder/conv2/b", {c}, 1);
    frozen("image_encoder/conv3/w", {c, c, 3, 3}, c * 9);
    frozen("image_encoder/conv3/b", {c}, 1);
    // biases start at 0 like the conv layers they stand beside
    for (size_t i = 1; i < params_.size(); i += 2)
        std::fill(params_[i].tensor.vec().begin(), params_[i].tensor.vec().end(), 0.0f);
}

Tensor ImageEncoder::encode(const Tensor& image) const {
    if (image.rank() != 4 || image.dim(1) != 3)
        throw ShapeError("ImageEncoder: expected [B,3,H,W], got " + shape_str(image.shape()));
    if (image.dim(2) % 4 != 0 || image.dim(3) % 4 != 0)
        throw ShapeError("ImageEncoder: H and W must be divisible by 4");
    Tensor h = ops::relu(ops::conv2d(image, params_[0].tensor, params_[1].tensor, 2, 1));
    h = ops::relu(ops::conv2d(h, params_[2].tensor, params_[3].tensor, 2, 1));
    h = ops::relu(ops::conv2d(h, params_[4].tensor, params_[5].tensor, 1, 1));
    return h;
}

std::vector<const Parameter*> ImageEncoder::parameters() const {
    std::vector<const Parameter*> out;
    for (const auto& p : params_) out.push_back(&p);
    return out;
}

Tensor positional_encoding(int h, int w, int c) {
    if (c % 4 != 0) throw ShapeError("positional_encoding: channels must be divisible by 4");
    Tensor pe({c, h, w});
    const int quarter = c / 4;
    // half-amplitude so additive fusion does not swamp prompt embeddings
    const double amp = 0.5;
    for (int q = 0; q < quarter; ++q) {
        double freq = std::pow(10000.0, -(double)q / (double)quarter);
        for (int r = 0; r < h; ++r)
            for (int col = 0; col < w; ++col) {
                int64_t at = (int64_t)r * w + col;
                pe.data()[((int64_t)(4 * q) * h * w) + at] = (float)(amp * std::sin(r * freq));
                pe.data()[((int64_t)(4 * q + 1) * h * w) + at] = (float)(amp * std::cos(r * freq));
                pe.data()[((int64_t)(4 * q + 2) * h * w) + at] = (float)(amp * std::sin(col * freq));
                pe.data()[((int64_t)(4 * q + 3) * h * w) + at] = (float)(amp * std::cos(col * freq));
            }
    }
    return pe;
}

void paint_box_channel(Tensor& dense, int n, int channel, const BoxPrompt& box, int scale,
                       float amplitude) {
    const int c = dense.dim(1), he = dense.dim(2), we = dense.dim(3);
    if (channel < 0 || channel >= c)
        throw ShapeError("paint_box_channel: channel out of range");
    int y0 = box.y_min / scale, y1 = std::min(box.y_max / scale, he - 1);
    int x0 = box.x_min / scale, x1 = std::min(box.x_max / scale, we - 1);
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x)
            dense.data()[(((int64_t)n * c + channel) * he + y) * we + x] = amplitude;
}

void BoxPrompt::validate(int h, int w) const {
    if (x_min >= x_max || y_min >= y_max)
        throw std::invalid_argument("BoxPrompt: degenerate box");
    if (x_min < 0 || y_min < 0 || x_max >= w || y_max >= h)
        throw std::invalid_argument("BoxPrompt: out of image bounds");
}

BoxPrompt mask_bbox(const metrics::BinaryMask& mask) {
    BoxPrompt b{mask.w, mask.h, -1, -1};
    for (int r = 0; r < mask.h; ++r)
        for (int c = 0; c < mask.w; ++c)
            if (mask.at(r, c)) {
                b.x_min = std::min(b.x_min, c);
                b.y_min = std::min(b.y_min, r);
                b.x_max = std::max(b.x_max, c);
                b.y_max = std::max(b.y_max, r);
            }
    if (b.x_max < 0) throw std::invalid_argument("mask_bbox: empty mask");
    return b;
}

BoxPrompt dilate_box(const BoxPrompt& box, int offset, int h, int w) {
    BoxPrompt out;
    out.x_min = std::max(0, box.x_min - offset);
    out.y_min = std::max(0, box.y_min - offset);
    out.x_max = std::min(w - 1, box.x_max + offset);
    out.y_max = std::min(h - 1, box.y_max + offset);
    return out;
}

BoxEncoder::BoxEncoder(int embed_channels, uint64_t seed) {
    Rng rng(seed);
    corner_bias_ = Parameter("box_encoder/corner_bias",
                             he_normal({2 * embed_channels}, embed_channels, rng));
}

Tensor BoxEncoder::encode(const std::vector<BoxPrompt>& boxes, const Tensor& pe, int scale) {
    const int c = pe.dim(0), he = pe.dim(1), we = pe.dim(2);
    const int batch = (int)boxes.size();
    Tensor corners({batch, 2 * c});
    for (int n = 0; n < batch; ++n) {
        boxes[n].validate(he * scale, we * scale);
        int y0 = std::min(boxes[n].y_min / scale, he - 1);
        int x0 = std::min(boxes[n].x_min / scale, we - 1);
        int y1 = std::min(boxes[n].y_max / scale, he - 1);
        int x1 = std::min(boxes[n].x_max / scale, we - 1);
        for (int ch = 0; ch < c; ++ch) {
            corners.data()[(int64_t)n * 2 * c + ch] = pe.data()[((int64_t)ch * he + y0) * we + x0];
            corners.data()[(int64_t)n * 2 * c + c + ch] =
                pe.data()[((int64_t)ch * he + y1) * we + x1];
        }
    }
    Tensor tokens = ops::add_bias_feature(corners, corner_bias_.tensor);
    return ops::reshape(tokens, {batch, 2, c});
}

std::vector<Parameter*> BoxEncoder::parameters() { return {&corner_bias_}; }

}  // namespace aseg::enc
