#pragma once

#include <cstdint>
#include <vector>

#include "aseg/metrics.hpp"
#include "aseg/prompt_encoder.hpp"
#include "aseg/tensor.hpp"

namespace aseg::mask {

// Fuses image embedding, positional encoding and prompt embeddings into a
// full-resolution mask logit map: additive fusion, one cross-attention block
// for the two sparse tokens, then two transposed-conv upsampling stages.
class MaskDecoder {
public:
    explicit MaskDecoder(uint64_t seed);

    // f_i [B,C,He,We], pe [C,He,We], prompts as produced by the prompt encoder
    Tensor decode(const Tensor& f_i, const Tensor& pe,
                  const prompt::PromptEmbeddings& prompts);

    std::vector<Parameter*> parameters();

private:
    std::vector<Parameter> params_;
    Parameter& p(const char* name);
};

// sigmoid(logit) > threshold, strict
std::vector<metrics::BinaryMask> binarize(const Tensor& logits, double threshold = 0.5);

}  // namespace aseg::mask
