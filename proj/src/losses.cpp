#include "aseg/losses.hpp"

#include <cmath>
#include <stdexcept>

#include "aseg/ops.hpp"

namespace op = aseg::ops;

namespace aseg::losses {

std::pair<Tensor, Tensor> mse_distill(const prompt::PromptEmbeddings& student,
                                      const prompt::PromptEmbeddings& teacher) {
    if (student.sparse.shape() != teacher.sparse.shape() ||
        student.dense.shape() != teacher.dense.shape())
        throw ShapeError("mse_distill: student/teacher shape mismatch");
    Tensor s = op::mean(op::square(op::sub(student.sparse, teacher.sparse)));
    Tensor d = op::mean(op::square(op::sub(student.dense, teacher.dense)));
    return {s, d};
}

Tensor dice_loss(const Tensor& pred, const Tensor& gt) {
    if (pred.shape() != gt.shape()) throw ShapeError("dice_loss: shape mismatch");
    Tensor inter = op::sum(op::mul(pred, gt));
    Tensor den = op::add(op::sum(op::square(pred)), op::sum(op::square(gt)));
    return op::sub(Tensor::scalar(1.0f),
                   op::div(op::mul_scalar(inter, 2.0f), op::add_scalar(den, 1e-6f)));
}

Tensor ce_loss(const Tensor& pred, const Tensor& gt) {
    if (pred.shape() != gt.shape()) throw ShapeError("ce_loss: shape mismatch");
    Tensor pc = op::clamp(pred, kCeClamp, 1.0f - kCeClamp);
    Tensor ones(gt.shape(), 1.0f);
    Tensor pos = op::mul(gt, op::log(pc));
    Tensor neg = op::mul(op::sub(ones, gt), op::log(op::sub(ones, pc)));
    return op::mul_scalar(op::mean(op::add(pos, neg)), -1.0f);
}

Tensor shape_distance_map(const Tensor& gt) {
    const int batch = gt.dim(0), h = gt.dim(2), w = gt.dim(3);
    Tensor out(gt.shape());
    for (int n = 0; n < batch; ++n) {
        metrics::BinaryMask m(h, w);
        for (int64_t i = 0; i < (int64_t)h * w; ++i)
            m.grid[i] = gt.data()[(int64_t)n * h * w + i] > 0.5f ? 1 : 0;
        metrics::DistanceMap d = metrics::edt(m);
        for (int64_t i = 0; i < (int64_t)h * w; ++i) {
            double v = 1.0 - std::min(d.dist[i] / kShapeDistanceDmax, 1.0);
            out.data()[(int64_t)n * h * w + i] = (float)v;
        }
    }
    return out;
}

Tensor shape_distance_loss(const Tensor& pred, const Tensor& gt, bool* degenerate) {
    if (pred.shape() != gt.shape()) throw ShapeError("shape_distance_loss: shape mismatch");
    Tensor d = shape_distance_map(gt);
    Tensor num = op::sum_hw(op::abs(op::sub(d, pred)));        // [B,C]
    Tensor den = op::add_scalar(op::sum_hw(pred), 1e-6f);      // [B,C]
    if (degenerate) {
        *degenerate = false;
        Tensor mass = op::sum_hw(pred);
        for (int64_t i = 0; i < mass.size(); ++i)
            if (mass.data()[i] <= 0.0f) *degenerate = true;
    }
    return op::mean(op::div(num, den));
}

void UncertaintyWeights::ensure(const std::string& member) {
    const std::string name = "lambda/" + member;
    auto pos = lambdas.begin();
    for (; pos != lambdas.end(); ++pos) {
        if (pos->name == name) return;
        if (pos->name > name) break;
    }
    // kept sorted by name so parameter order is independent of creation order
    lambdas.insert(pos, Parameter(name, Tensor::scalar(1.0f, true)));
}

Parameter& UncertaintyWeights::lambda(const std::string& member) {
    for (auto& l : lambdas)
        if (l.name == "lambda/" + member) return l;
    throw std::logic_error("UncertaintyWeights: unknown member " + member);
}

std::vector<Parameter*> UncertaintyWeights::parameters() {
    std::vector<Parameter*> out;
    for (auto& l : lambdas) out.push_back(&l);
    return out;
}

Tensor uncertainty_aggregate(const std::vector<std::pair<std::string, Tensor>>& members,
                             UncertaintyWeights& weights, LossReport& report, bool joint) {
    if (members.empty()) throw std::invalid_argument("uncertainty_aggregate: no members");
    report.members.clear();
    report.lambda_clamped = false;
    Tensor total;
    for (const auto& [name, raw] : members) {
        LossReport::Member m;
        m.name = name;
        m.raw = raw.item();
        Tensor term;
        if (joint) {
            weights.ensure(name);
            Parameter& lam = weights.lambda(name);
            // keep |lambda| above the floor (1/lambda^2 singularity guard)
            float& lv = lam.tensor.data()[0];
            if (std::fabs(lv) < kLambdaFloor) {
                lv = lv < 0.0f ? -kLambdaFloor : kLambdaFloor;
                report.lambda_clamped = true;
            }
            Tensor lam_sq = op::square(lam.tensor);
            Tensor weight = op::div(Tensor::scalar(0.5f), lam_sq);
            term = op::add(op::mul(weight, raw), op::log(op::add_scalar(lam_sq, 1.0f)));
            m.lambda = lv;
            m.weight = 0.5 / ((double)lv * lv);
            m.reg = std::log(1.0 + (double)lv * lv);
        } else {
            term = raw;
            m.weight = 1.0;
            m.reg = 0.0;
        }
        report.members.push_back(m);
        total = total.defined() ? op::add(total, term) : term;
    }
    report.total = total.item();
    return total;
}

nlohmann::json LossReport::to_json(int step) const {
    nlohmann::json mj = nlohmann::json::object();
    nlohmann::json lj = nlohmann::json::object();
    for (const auto& m : members) {
        mj[m.name] = {{"raw", m.raw}, {"weight", m.weight}, {"reg", m.reg}};
        lj[m.name] = m.lambda;
    }
    return {{"step", step}, {"members", mj}, {"total", total}, {"lambdas", lj}};
}

Teacher::Teacher(int num_classes, int he, int we, uint64_t seed)
    : num_classes_(num_classes), he_(he), we_(we) {
    Rng rng(seed);
    const int c = enc::kEmbedChannels;
    const int in = 4 + num_classes;
    const int hidden = 32;
    auto frozen = [&](const char* name, Shape shape, int fan_in) {
        params_.emplace_back(std::string("teacher/") + name,
                             enc::he_normal(std::move(shape), fan_in, rng), true);
    };
    if (num_classes > c)
        throw std::invalid_argument("Teacher: num_classes exceeds embedding channels");
    frozen("fc1/w", {in, hidden}, in);
    frozen("fc1/b", {hidden}, 1);
    frozen("sparse/w", {hidden, 2 * c}, hidden);
    frozen("sparse/b", {2 * c}, 1);
}

prompt::PromptEmbeddings Teacher::embeddings_for(const std::vector<enc::BoxPrompt>& boxes,
                                                 const std::vector<int>& classes,
                                                 int image_h, int image_w) const {
    if (boxes.size() != classes.size())
        throw std::invalid_argument("Teacher: boxes/classes length mismatch");
    NoGradGuard ng;  // teacher targets are constants
    const int batch = (int)boxes.size();
    const int c = enc::kEmbedChannels;
    Tensor in({batch, 4 + num_classes_});
    for (int n = 0; n < batch; ++n) {
        float* row = in.data() + (int64_t)n * (4 + num_classes_);
        row[0] = (float)boxes[n].x_min / (float)image_w;
        row[1] = (float)boxes[n].y_min / (float)image_h;
        row[2] = (float)boxes[n].x_max / (float)image_w;
        row[3] = (float)boxes[n].y_max / (float)image_h;
        row[4 + classes[n]] = 1.0f;
    }
    Tensor h = op::relu(op::linear(in, params_[0].tensor, params_[1].tensor));
    prompt::PromptEmbeddings out;
    out.sparse = op::reshape(op::linear(h, params_[2].tensor, params_[3].tensor), {batch, 2, c});

    // dense target: the shared painted-channel convention (channel = class id
    // over the box footprint), which the mask decoder is built to read
    Tensor dense({batch, c, he_, we_});
    for (int n = 0; n < batch; ++n)
        enc::paint_box_channel(dense, n, classes[n], boxes[n], image_h / he_,
                               enc::kPromptPaintAmplitude);
    out.dense = dense;
    return out;
}

std::vector<const Parameter*> Teacher::parameters() const {
    std::vector<const Parameter*> out;
    for (const auto& p : params_) out.push_back(&p);
    return out;
}

}  // namespace aseg::losses
