#include <doctest.h>

#include <cmath>

#include "aseg/encoders.hpp"
#include "aseg/mask_decoder.hpp"
#include "aseg/ops.hpp"
#include "test_util.hpp"

using namespace aseg;
namespace op = aseg::ops;

namespace {

prompt::PromptEmbeddings random_prompts(int batch, Rng& rng) {
    prompt::PromptEmbeddings p;
    p.sparse = random_tensor({batch, 2, 32}, rng);
    p.dense = random_tensor({batch, 32, 16, 16}, rng);
    return p;
}

}  // namespace

TEST_CASE("mask decoder: output shape and finiteness") {
    mask::MaskDecoder dec(21);
    Rng rng(1);
    Tensor f_i = random_tensor({2, 32, 16, 16}, rng);
    Tensor pe = enc::positional_encoding(16, 16, 32);
    Tensor logits = dec.decode(f_i, pe, random_prompts(2, rng));
    CHECK(logits.shape() == Shape{2, 1, 64, 64});
    CHECK(logits.all_finite());
}

TEST_CASE("mask decoder: zero prompts and zero embedding give spatially constant logits") {
    mask::MaskDecoder dec(22);
    Tensor f_i({1, 32, 16, 16});
    Tensor pe({32, 16, 16});  // zero PE isolates bias propagation
    prompt::PromptEmbeddings p;
    p.sparse = Tensor({1, 2, 32});
    p.dense = Tensor({1, 32, 16, 16});
    Tensor logits = dec.decode(f_i, pe, p);
    for (int64_t i = 1; i < logits.size(); ++i)
        CHECK(logits.data()[i] == doctest::Approx(logits.data()[0]));
}

TEST_CASE("mask decoder: gradients reach both prompt embeddings") {
    mask::MaskDecoder dec(23);
    Rng rng(2);
    Tensor f_i = random_tensor({1, 32, 16, 16}, rng);
    Tensor pe = enc::positional_encoding(16, 16, 32);
    prompt::PromptEmbeddings p = random_prompts(1, rng);
    p.sparse.set_requires_grad(true);
    p.dense.set_requires_grad(true);
    Tensor loss = op::mean(op::square(dec.decode(f_i, pe, p)));
    loss.backward();
    auto nonzero = [](const std::vector<float>& g) {
        for (float v : g)
            if (v != 0.0f) return true;
        return false;
    };
    CHECK(nonzero(p.sparse.grad()));
    CHECK(nonzero(p.dense.grad()));
}

TEST_CASE("mask decoder: dense prompt shape mismatch rejected") {
    mask::MaskDecoder dec(24);
    Rng rng(3);
    Tensor f_i = random_tensor({1, 32, 16, 16}, rng);
    Tensor pe = enc::positional_encoding(16, 16, 32);
    prompt::PromptEmbeddings p;
    p.sparse = random_tensor({1, 2, 32}, rng);
    p.dense = random_tensor({1, 32, 8, 8}, rng);
    CHECK_THROWS_AS(dec.decode(f_i, pe, p), ShapeError);
}

TEST_CASE("mask decoder: prompts change the output") {
    mask::MaskDecoder dec(25);
    Rng rng(4);
    Tensor f_i = random_tensor({1, 32, 16, 16}, rng);
    Tensor pe = enc::positional_encoding(16, 16, 32);
    Tensor a = dec.decode(f_i, pe, random_prompts(1, rng));
    Tensor b = dec.decode(f_i, pe, random_prompts(1, rng));
    double linf = 0.0;
    for (int64_t i = 0; i < a.size(); ++i)
        linf = std::max(linf, std::fabs((double)a.data()[i] - b.data()[i]));
    CHECK(linf > 0.0);
}

TEST_CASE("binarize conventions") {
    Tensor logits({1, 1, 2, 2});
    logits.data()[0] = 0.0f;    // sigmoid 0.5: excluded at threshold 0.5 (strict >)
    logits.data()[1] = 10.0f;   // ~1
    logits.data()[2] = -10.0f;  // ~0
    logits.data()[3] = 0.1f;
    auto masks = mask::binarize(logits, 0.5);
    REQUIRE(masks.size() == 1);
    CHECK(masks[0].grid[0] == 0);
    CHECK(masks[0].grid[1] == 1);
    CHECK(masks[0].grid[2] == 0);
    CHECK(masks[0].grid[3] == 1);

    // threshold 0 admits every finite logit
    auto all = mask::binarize(logits, 0.0);
    for (uint8_t v : all[0].grid) CHECK(v == 1);

    Tensor big({1, 1, 2, 2}, 10.0f);
    auto ones = mask::binarize(big, 0.5);
    CHECK(ones[0].count() == 4);
}
