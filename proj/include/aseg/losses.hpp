#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "aseg/encoders.hpp"
#include "aseg/metrics.hpp"
#include "aseg/prompt_encoder.hpp"
#include "aseg/tensor.hpp"

namespace aseg::losses {

constexpr float kLambdaFloor = 1e-3f;
constexpr float kCeClamp = 1e-7f;
constexpr double kShapeDistanceDmax = 10.0;  // pixels

// MSE over all elements, separately for sparse and dense embeddings
std::pair<Tensor, Tensor> mse_distill(const prompt::PromptEmbeddings& student,
                                      const prompt::PromptEmbeddings& teacher);

// 1 - 2*sum(p*g) / (sum(p^2) + sum(g^2) + eps)
Tensor dice_loss(const Tensor& pred, const Tensor& gt);

// mean binary cross-entropy, pred clamped to [1e-7, 1-1e-7]
Tensor ce_loss(const Tensor& pred, const Tensor& gt);

// Normalized complement-distance map for the SD loss: 1 inside the target,
// decaying to 0 over kShapeDistanceDmax pixels outside it.
Tensor shape_distance_map(const Tensor& gt);

// per sample/channel f = sum|D(gt) - pred| / (sum pred + eps), averaged
Tensor shape_distance_loss(const Tensor& pred, const Tensor& gt,
                           bool* degenerate = nullptr);

struct UncertaintyWeights {
    std::vector<Parameter> lambdas;  // one scalar per loss member, init 1.0

    void ensure(const std::string& member);
    Parameter& lambda(const std::string& member);
    std::vector<Parameter*> parameters();
};

struct LossReport {
    struct Member {
        std::string name;
        double raw = 0.0;     // L_j
        double weight = 0.0;  // 1/(2 lambda_j^2)
        double reg = 0.0;     // log(1 + lambda_j^2)
        double lambda = 1.0;
    };
    std::vector<Member> members;
    double total = 0.0;
    bool lambda_clamped = false;
    bool sd_degenerate = false;

    nlohmann::json to_json(int step) const;
};

// Eq.-style aggregation: total = sum_j (1/(2 lambda_j^2) L_j + log(1+lambda_j^2));
// joint=false falls back to a unit-weight sum (no lambda gradients).
Tensor uncertainty_aggregate(const std::vector<std::pair<std::string, Tensor>>& members,
                             UncertaintyWeights& weights, LossReport& report,
                             bool joint = true);

// Frozen deterministic stand-in for a pretrained prompt-encoder teacher:
// maps (gt bounding box, class) to embeddings of the student's shapes.
class Teacher {
public:
    Teacher(int num_classes, int he, int we, uint64_t seed);
    prompt::PromptEmbeddings embeddings_for(const std::vector<enc::BoxPrompt>& boxes,
                                            const std::vector<int>& classes, int image_h,
                                            int image_w) const;
    std::vector<const Parameter*> parameters() const;

private:
    int num_classes_, he_, we_;
    std::vector<Parameter> params_;
};

}  // namespace aseg::losses
