#include "lnm/mil.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "lnm/config_json.hpp"
#include "lnm/metrics.hpp"
#include "tensor_io.hpp"

namespace lnm::mil {

std::string to_string(Aggregation a) {
    switch (a) {
        case Aggregation::MaxOnly: return "max_only";
        case Aggregation::MlpOnly: return "mlp_only";
        case Aggregation::Weighted: return "weighted";
    }
    return "weighted";
}

Aggregation parse_aggregation(const std::string& s) {
    if (s == "max_only") return Aggregation::MaxOnly;
    if (s == "mlp_only") return Aggregation::MlpOnly;
    if (s == "weighted") return Aggregation::Weighted;
    throw ConfigError("unknown aggregation '" + s + "' (expected max_only, mlp_only or weighted)");
}

void FeatureSwitches::validate() const {
    if (!use_deep_features && !use_clinical_node) {
        throw ConfigError("ablation disables every node input (deep features and node features)");
    }
}

double MILConfig::effective_eta() const {
    switch (switches.aggregation) {
        case Aggregation::MaxOnly: return 0.0;
        case Aggregation::MlpOnly: return 1.0;
        case Aggregation::Weighted: return eta;
    }
    return eta;
}

void MILConfig::validate() const {
    auto fail = [](const std::string& what) { throw ConfigError("mil config: " + what); };
    if (eta_override) {
        if (!(eta >= 0.0 && eta <= 1.0)) fail("eta must be in [0,1]");
    } else if (!(eta >= kEtaMin && eta <= kEtaMax)) {
        fail("eta must be in [0.5,0.75] unless eta_override is set");
    }
    if (!(threshold > 0.0 && threshold < 1.0)) fail("threshold must be in (0,1)");
    if (patch_hidden_dim < 1 || patient_hidden_dim < 1) fail("hidden dimensions must be >= 1");
    if (!(patch_dropout >= 0.0 && patch_dropout < 1.0)) fail("patch_dropout must be in [0,1)");
    if (!(patient_dropout >= 0.0 && patient_dropout < 1.0)) fail("patient_dropout must be in [0,1)");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) fail("learning_rate must be positive");
    if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) fail("weight_decay must be nonnegative");
    if (batch_size < 2) fail("batch_size must be >= 2");
    if (accumulation_steps < 1) fail("accumulation_steps must be >= 1");
    if (epochs < 1) fail("epochs must be >= 1");
    if (synthetic_patients != 0 && (synthetic_patients < 5 || synthetic_patients > 30)) {
        fail("synthetic_patients must be 0 or in [5,30]");
    }
    if (!(oversample_ratio > 0.0)) fail("oversample_ratio must be positive");
    if (max_patches < 1) fail("max_patches must be >= 1");
    if (!(state_auc_threshold >= 0.0 && state_auc_threshold <= 1.0)) fail("state_auc_threshold must be in [0,1]");
    switches.validate();
    synthetic_augmentation.validate();
}

size_t EncodedBag::real_count() const {
    return size_t(std::count_if(slots.begin(), slots.end(), [](const EncodedPatch& p) { return !p.padding; }));
}

int EncodedBag::largest_node_slot() const {
    int best = -1;
    for (int i = 0; i < int(slots.size()); ++i) {
        if (slots[size_t(i)].padding) continue;
        if (best < 0 || slots[size_t(i)].features.short_axis_mm > slots[size_t(best)].features.short_axis_mm) best = i;
    }
    return best;
}

std::vector<EncodedBag> encode_bags(vae::VariationalAutoencoder& encoder, const std::vector<PatientBag>& bags,
                                    const VoxelSpacing& spacing, int max_patches) {
    std::vector<const Image*> images;
    for (const auto& bag : bags) {
        if (int(bag.patches.size()) > max_patches) {
            throw ValidationError("patient " + bag.patient_id + " has more than " + std::to_string(max_patches) +
                                  " patches");
        }
        for (const auto& p : bag.patches) {
            if (!p.is_padding) images.push_back(&p.image);
        }
    }
    const torch::Tensor mu = vae::encode_patches(encoder, images).contiguous();
    const int64_t dim = mu.size(1);
    const float* data = mu.data_ptr<float>();

    std::vector<EncodedBag> out;
    out.reserve(bags.size());
    size_t row = 0;
    for (const auto& bag : bags) {
        EncodedBag e;
        e.patient_id = bag.patient_id;
        e.label = bag.label();
        e.age = bag.age;
        e.sex = bag.sex;
        e.t_stage = bag.t_stage;
        e.is_synthetic = bag.is_synthetic;
        e.parent_id = bag.parent_id;
        e.slots.resize(size_t(max_patches));
        for (size_t i = 0; i < bag.patches.size(); ++i) {
            const auto& p = bag.patches[i];
            if (p.is_padding) continue;
            auto& slot = e.slots[i];
            slot.padding = false;
            slot.node_id = p.node_id;
            slot.latent.assign(data + row * dim, data + (row + 1) * dim);
            slot.features = morphometry::node_features(p.mask, spacing);
            ++row;
        }
        out.push_back(std::move(e));
    }
    return out;
}

double FeatureContext::scale_age(double age) const {
    if (age_max <= age_min) return 0.0;
    return std::clamp((age - age_min) / (age_max - age_min), 0.0, 1.0);
}

FeatureContext fit_feature_context(const std::vector<EncodedBag>& train) {
    std::vector<morphometry::LabeledFeatures> rows;
    FeatureContext ctx;
    bool any = false;
    for (const auto& bag : train) {
        if (bag.is_synthetic) continue;
        if (!any) {
            ctx.age_min = ctx.age_max = bag.age;
            any = true;
        }
        ctx.age_min = std::min(ctx.age_min, bag.age);
        ctx.age_max = std::max(ctx.age_max, bag.age);
        for (const auto& slot : bag.slots) {
            if (!slot.padding) rows.push_back({bag.patient_id, slot.features.raw()});
        }
    }
    if (!any) throw ConfigError("feature context: no real training patients");
    ctx.node_scaler = morphometry::fit_scaler(rows);
    return ctx;
}

void apply_feature_context(std::vector<EncodedBag>& bags, const FeatureContext& context) {
    for (auto& bag : bags) {
        for (auto& slot : bag.slots) {
            if (!slot.padding) morphometry::apply_scaler(slot.features, context.node_scaler);
        }
    }
}

int node_input_dim(int latent_dim, const FeatureSwitches& s) {
    return (s.use_deep_features ? latent_dim : 0) + (s.use_clinical_node ? morphometry::kNumFeatures : 0);
}

namespace {

constexpr int kClinicalPatientDim = 1 + 1 + 4;  // age, sex, T one-hot

int patient_context_dim(const FeatureSwitches& s) {
    return (s.use_clinical_patient ? kClinicalPatientDim : 0) + (s.use_clinical_node ? morphometry::kNumFeatures : 0);
}

}  // namespace

int patient_input_dim(int max_patches, const FeatureSwitches& s) { return max_patches + patient_context_dim(s); }

std::vector<float> node_input(const EncodedPatch& patch, const FeatureSwitches& s, int latent_dim) {
    std::vector<float> v;
    v.reserve(size_t(node_input_dim(latent_dim, s)));
    if (s.use_deep_features) {
        if (patch.padding) {
            v.insert(v.end(), size_t(latent_dim), 0.0f);
        } else {
            if (int(patch.latent.size()) != latent_dim) {
                throw ValidationError("node input: latent has " + std::to_string(patch.latent.size()) +
                                      " entries, expected " + std::to_string(latent_dim));
            }
            v.insert(v.end(), patch.latent.begin(), patch.latent.end());
        }
    }
    if (s.use_clinical_node) {
        for (double f : patch.features.normalized) v.push_back(patch.padding ? 0.0f : float(f));
    }
    return v;
}

std::vector<float> patient_context(const EncodedBag& bag, const FeatureContext& context, const FeatureSwitches& s) {
    std::vector<float> v;
    if (s.use_clinical_patient) {
        v.push_back(float(context.scale_age(bag.age)));
        v.push_back(bag.sex == Sex::Female ? 1.0f : 0.0f);
        for (int t = 0; t < 4; ++t) v.push_back(int(bag.t_stage) == t ? 1.0f : 0.0f);
    }
    if (s.use_clinical_node) {
        const int largest = bag.largest_node_slot();
        for (int f = 0; f < morphometry::kNumFeatures; ++f) {
            v.push_back(largest < 0 ? 0.0f : float(bag.slots[size_t(largest)].features.normalized[size_t(f)]));
        }
    }
    return v;
}

BatchTensors make_batch(const std::vector<const EncodedBag*>& bags, const FeatureContext& context,
                        const FeatureSwitches& switches, int latent_dim, int max_patches) {
    const int node_dim = node_input_dim(latent_dim, switches);
    const int ctx_dim = patient_context_dim(switches);
    std::vector<float> node_data, ctx_data, labels;
    std::vector<int64_t> node_bag, node_slot;
    for (size_t b = 0; b < bags.size(); ++b) {
        const auto& bag = *bags[b];
        if (int(bag.slots.size()) != max_patches) {
            throw ValidationError("patient " + bag.patient_id + " does not have " + std::to_string(max_patches) +
                                  " slots");
        }
        for (int i = 0; i < max_patches; ++i) {
            const auto& slot = bag.slots[size_t(i)];
            if (slot.padding) continue;
            const auto in = node_input(slot, switches, latent_dim);
            node_data.insert(node_data.end(), in.begin(), in.end());
            node_bag.push_back(int64_t(b));
            node_slot.push_back(i);
        }
        const auto ctx = patient_context(bag, context, switches);
        ctx_data.insert(ctx_data.end(), ctx.begin(), ctx.end());
        labels.push_back(float(bag.label));
    }
    BatchTensors t;
    t.batch = int(bags.size());
    const auto m = int64_t(node_bag.size());
    t.node_inputs = torch::from_blob(node_data.data(), {m, node_dim}, torch::kFloat32).clone();
    t.node_bag = torch::from_blob(node_bag.data(), {m}, torch::kLong).clone();
    t.node_slot = torch::from_blob(node_slot.data(), {m}, torch::kLong).clone();
    t.patient_ctx = torch::from_blob(ctx_data.data(), {int64_t(bags.size()), ctx_dim}, torch::kFloat32).clone();
    t.labels = torch::from_blob(labels.data(), {int64_t(bags.size())}, torch::kFloat32).clone();
    return t;
}

MILModelImpl::MILModelImpl(int latent_dim, const MILConfig& config) : latent_dim_(latent_dim), config_(config) {
    namespace nn = torch::nn;
    const int node_dim = node_input_dim(latent_dim, config.switches);
    if (node_dim < 1) throw ConfigError("node MLP has no inputs");
    const int h = config.patch_hidden_dim;
    node_mlp_ = register_module(
        "node_mlp", nn::Sequential(nn::Linear(node_dim, h), nn::BatchNorm1d(h), nn::GELU(),
                                   nn::Dropout(config.patch_dropout), nn::Linear(h, 1)));

    const int p = config.patient_hidden_dim;
    nn::Sequential patient;
    int in = patient_input_dim(config.max_patches, config.switches);
    for (int layer = 0; layer + 1 < kPatientMlpLayers; ++layer) {
        patient->push_back(nn::Linear(in, p));
        patient->push_back(nn::BatchNorm1d(p));
        patient->push_back(nn::GELU());
        patient->push_back(nn::Dropout(config.patient_dropout));
        in = p;
    }
    patient->push_back(nn::Linear(in, 1));
    patient_mlp_ = register_module("patient_mlp", patient);
}

torch::Tensor MILModelImpl::node_forward(const torch::Tensor& node_inputs) {
    const int node_dim = node_input_dim(latent_dim_, config_.switches);
    if (node_inputs.dim() != 2 || node_inputs.size(1) != node_dim) {
        throw ValidationError("node MLP expects inputs of width " + std::to_string(node_dim));
    }
    return torch::sigmoid(node_mlp_->forward(node_inputs)).squeeze(1);
}

ForwardResult MILModelImpl::forward(const BatchTensors& batch) {
    const int64_t b = batch.batch;
    const int64_t slots = config_.max_patches;
    ForwardResult r;
    r.real_mask = torch::zeros({b, slots}, torch::kBool);
    r.node_probs = torch::zeros({b, slots});
    if (batch.node_inputs.size(0) > 0) {
        torch::Tensor probs;
        if (batch.node_inputs.size(0) == 1 && is_training()) {
            // BatchNorm needs two rows in training mode; pair the node with itself.
            probs = node_forward(torch::cat({batch.node_inputs, batch.node_inputs})).slice(0, 0, 1);
        } else {
            probs = node_forward(batch.node_inputs);
        }
        r.node_probs = r.node_probs.index_put({batch.node_bag, batch.node_slot}, probs);
        r.real_mask.index_put_({batch.node_bag, batch.node_slot}, true);
    }
    r.max_prob = r.node_probs.masked_fill(~r.real_mask, -1.0).amax(1).clamp_min(0.0);
    const auto patient_in = torch::cat({r.node_probs, batch.patient_ctx}, 1);
    r.patient_prob = torch::sigmoid(patient_mlp_->forward(patient_in)).squeeze(1);
    const double eta = config_.effective_eta();
    r.final_prob = eta * r.patient_prob + (1.0 - eta) * r.max_prob;
    return r;
}

double aggregate(double eta, double patient_mlp_prob, double max_node_prob) {
    return eta * patient_mlp_prob + (1.0 - eta) * max_node_prob;
}

int decide(double final_prob, double threshold) { return final_prob >= threshold ? 1 : 0; }

double node_mlp_forward(MILModel& model, const EncodedPatch& patch) {
    torch::NoGradGuard no_grad;
    model->eval();
    auto in = node_input(patch, model->config().switches, model->latent_dim());
    const auto t = torch::from_blob(in.data(), {1, int64_t(in.size())}, torch::kFloat32).clone();
    return model->node_forward(t).item<double>();
}

namespace {

std::vector<PredictionTrace> run_predict(MILModel& model, const std::vector<EncodedBag>& bags,
                                         const FeatureContext& context) {
    torch::NoGradGuard no_grad;
    model->eval();
    std::vector<const EncodedBag*> ptrs;
    for (const auto& b : bags) ptrs.push_back(&b);
    std::vector<PredictionTrace> traces;
    if (ptrs.empty()) return traces;
    const auto& cfg = model->config();
    const auto batch = make_batch(ptrs, context, cfg.switches, model->latent_dim(), cfg.max_patches);
    const auto out = model->forward(batch);
    const auto node_probs = out.node_probs.contiguous();
    for (size_t i = 0; i < bags.size(); ++i) {
        PredictionTrace t;
        t.patient_id = bags[i].patient_id;
        t.label = bags[i].label;
        const auto row = node_probs[int64_t(i)];
        t.node_probs.resize(size_t(cfg.max_patches));
        for (int s = 0; s < cfg.max_patches; ++s) t.node_probs[size_t(s)] = row[s].item<double>();
        t.patient_mlp_prob = out.patient_prob[int64_t(i)].item<double>();
        t.max_node_prob = out.max_prob[int64_t(i)].item<double>();
        t.final_prob = aggregate(cfg.effective_eta(), t.patient_mlp_prob, t.max_node_prob);
        t.decision = decide(t.final_prob, cfg.threshold);
        t.no_real_nodes = bags[i].real_count() == 0;
        t.n_states = 1;
        t.mean_prob = t.min_prob = t.max_prob_across_states = t.final_prob;
        traces.push_back(std::move(t));
    }
    return traces;
}

}  // namespace

std::vector<PredictionTrace> predict(MILModel& model, const std::vector<EncodedBag>& bags,
                                     const FeatureContext& context) {
    return run_predict(model, bags, context);
}

PredictionTrace patient_forward(const EncodedBag& bag, std::vector<MILModel>& states, const FeatureContext& context) {
    if (states.empty()) throw ValidationError("patient_forward: no model states supplied");
    const std::vector<EncodedBag> one{bag};
    PredictionTrace trace = run_predict(states.front(), one, context).front();
    std::vector<double> finals;
    for (auto& s : states) finals.push_back(run_predict(s, one, context).front().final_prob);
    const double n = double(finals.size());
    const double mean = std::accumulate(finals.begin(), finals.end(), 0.0) / n;
    double var = 0.0;
    for (double f : finals) var += (f - mean) * (f - mean);
    trace.n_states = int(finals.size());
    trace.mean_prob = mean;
    trace.sd_prob = std::sqrt(var / n);
    trace.min_prob = *std::min_element(finals.begin(), finals.end());
    trace.max_prob_across_states = *std::max_element(finals.begin(), finals.end());
    return trace;
}

void write_traces(std::ostream& out, const std::vector<PredictionTrace>& traces) {
    out << "patient_id,label,final_prob,patient_mlp_prob,max_node_prob,decision,no_real_nodes,n_states,mean_prob,"
           "sd_prob,min_prob,max_prob_across_states,node_probs\n";
    out << std::setprecision(17);
    for (const auto& t : traces) {
        out << t.patient_id << ',' << t.label << ',' << t.final_prob << ',' << t.patient_mlp_prob << ','
            << t.max_node_prob << ',' << t.decision << ',' << int(t.no_real_nodes) << ',' << t.n_states << ','
            << t.mean_prob << ',' << t.sd_prob << ',' << t.min_prob << ',' << t.max_prob_across_states << ',';
        for (size_t i = 0; i < t.node_probs.size(); ++i) out << (i ? ";" : "") << t.node_probs[i];
        out << '\n';
    }
}

std::vector<PredictionTrace> read_traces(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw DataError("trace file is empty");
    std::vector<PredictionTrace> traces;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (line.back() == ',') cells.emplace_back();
        if (cells.size() != 13) throw DataError("trace line " + std::to_string(line_no) + ": expected 13 columns");
        try {
            PredictionTrace t;
            t.patient_id = cells[0];
            t.label = std::stoi(cells[1]);
            t.final_prob = std::stod(cells[2]);
            t.patient_mlp_prob = std::stod(cells[3]);
            t.max_node_prob = std::stod(cells[4]);
            t.decision = std::stoi(cells[5]);
            t.no_real_nodes = std::stoi(cells[6]) != 0;
            t.n_states = std::stoi(cells[7]);
            t.mean_prob = std::stod(cells[8]);
            t.sd_prob = std::stod(cells[9]);
            t.min_prob = std::stod(cells[10]);
            t.max_prob_across_states = std::stod(cells[11]);
            std::stringstream ps(cells[12]);
            while (std::getline(ps, cell, ';')) {
                if (!cell.empty()) t.node_probs.push_back(std::stod(cell));
            }
            traces.push_back(std::move(t));
        } catch (const std::logic_error&) {
            throw DataError("trace line " + std::to_string(line_no) + ": malformed number");
        }
    }
    return traces;
}

std::vector<PatientBag> make_synthetic_patients(const std::vector<PatientBag>& train, int n,
                                                double oversample_ratio,
                                                const preprocess::AugmentationConfig& augmentation,
                                                preprocess::Rng& rng) {
    std::vector<PatientBag> out(train);
    if (n <= 0) return out;
    std::vector<const PatientBag*> pos, neg;
    for (const auto& b : train) {
        if (b.is_synthetic) continue;
        (b.label() ? pos : neg).push_back(&b);
    }
    if (pos.empty()) throw ConfigError("synthetic patients requested but the training set has no positive patient");
    const double p_positive = neg.empty() ? 1.0 : oversample_ratio / (1.0 + oversample_ratio);
    std::bernoulli_distribution pick_positive(p_positive);
    for (int k = 0; k < n; ++k) {
        const auto& group = pick_positive(rng) ? pos : neg;
        std::uniform_int_distribution<size_t> pick(0, group.size() - 1);
        const PatientBag& parent = *group[pick(rng)];
        PatientBag clone = parent;
        std::ostringstream id;
        id << "SYN" << std::setw(4) << std::setfill('0') << (k + 1) << '-' << parent.patient_id;
        clone.patient_id = id.str();
        clone.is_synthetic = true;
        clone.parent_id = parent.patient_id;
        for (auto& p : clone.patches) {
            p = preprocess::augment(p, augmentation, rng);
            p.patient_id = clone.patient_id;
        }
        out.push_back(std::move(clone));
    }
    return out;
}

std::vector<PredictionTrace> predict(TrainedClassifier& clf, const std::vector<EncodedBag>& bags) {
    std::vector<EncodedBag> normalized(bags);
    apply_feature_context(normalized, clf.context);
    return run_predict(clf.model, normalized, clf.context);
}

void write_classifier_history(std::ostream& out, const std::vector<ClassifierEpoch>& history) {
    out << "epoch,loss,train_auc,test_auc\n" << std::setprecision(10);
    for (const auto& h : history) out << h.epoch << ',' << h.loss << ',' << h.train_auc << ',' << h.test_auc << '\n';
}

namespace {

double auc_of(const std::vector<PredictionTrace>& traces) {
    std::vector<int> labels;
    std::vector<double> probs;
    for (const auto& t : traces) {
        labels.push_back(t.label);
        probs.push_back(t.final_prob);
    }
    return evaluation::auc(labels, probs).value_or(std::nan(""));
}

}  // namespace

TrainedClassifier train_classifier(const std::vector<EncodedBag>& train, const std::vector<EncodedBag>& test,
                                   int latent_dim, const MILConfig& config) {
    int n_pos = 0, n_neg = 0;
    for (const auto& b : train) (b.label ? n_pos : n_neg) += 1;
    if (n_pos == 0 || n_neg == 0) throw DataError("train_classifier: training set contains a single class");

    TrainedClassifier clf;
    clf.context = fit_feature_context(train);
    std::vector<EncodedBag> train_set(train), test_set(test);
    apply_feature_context(train_set, clf.context);
    apply_feature_context(test_set, clf.context);
    std::vector<EncodedBag> train_real;
    for (const auto& b : train_set) {
        if (!b.is_synthetic) train_real.push_back(b);
    }

    torch::manual_seed(derive_seed(config.seed, "mil/init"));
    clf.model = MILModel(latent_dim, config);
    torch::optim::AdamW optimizer(clf.model->parameters(),
                                  torch::optim::AdamWOptions(config.learning_rate).weight_decay(config.weight_decay));
    preprocess::Rng rng(derive_seed(config.seed, "mil/data"));
    std::vector<size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        clf.model->train();
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        int loss_count = 0;
        int pending = 0;
        optimizer.zero_grad();
        for (size_t start = 0; start < order.size(); start += size_t(config.batch_size)) {
            const size_t end = std::min(order.size(), start + size_t(config.batch_size));
            if (end - start < 2) continue;
            std::vector<const EncodedBag*> batch_bags;
            for (size_t i = start; i < end; ++i) batch_bags.push_back(&train_set[order[i]]);
            const auto batch = make_batch(batch_bags, clf.context, config.switches, latent_dim, config.max_patches);
            const auto out = clf.model->forward(batch);
            const auto p = out.final_prob.clamp(1e-6, 1.0 - 1e-6);
            const auto loss = torch::binary_cross_entropy(p, batch.labels);
            if (!std::isfinite(loss.item<double>())) {
                throw NumericalError("classifier loss became non-finite at epoch " + std::to_string(epoch));
            }
            (loss / config.accumulation_steps).backward();
            loss_sum += loss.item<double>();
            ++loss_count;
            if (++pending == config.accumulation_steps) {
                optimizer.step();
                optimizer.zero_grad();
                pending = 0;
            }
        }
        if (pending > 0) {
            optimizer.step();
            optimizer.zero_grad();
        }

        ClassifierEpoch rec;
        rec.epoch = epoch;
        rec.loss = loss_count ? loss_sum / loss_count : 0.0;
        rec.train_auc = auc_of(run_predict(clf.model, train_real, clf.context));
        rec.test_auc = std::nan("");
        if (!test_set.empty()) {
            auto traces = run_predict(clf.model, test_set, clf.context);
            rec.test_auc = auc_of(traces);
            if (rec.test_auc >= config.state_auc_threshold) clf.states.push_back({epoch, rec.test_auc, std::move(traces)});
        }
        clf.history.push_back(rec);
    }
    clf.model->eval();
    return clf;
}

namespace {

constexpr char kMagic[9] = "LNMMILMD";
constexpr std::uint32_t kVersion = 1;

nlohmann::json context_to_json(const FeatureContext& c) {
    const auto& s = c.node_scaler;
    return {{"min", s.min},
            {"max", s.max},
            {"degenerate", s.degenerate},
            {"fitted_on", s.fitted_on},
            {"age_min", c.age_min},
            {"age_max", c.age_max}};
}

FeatureContext context_from_json(const nlohmann::json& j) {
    FeatureContext c;
    c.node_scaler.min = j.at("min").get<morphometry::FeatureVector>();
    c.node_scaler.max = j.at("max").get<morphometry::FeatureVector>();
    c.node_scaler.degenerate = j.at("degenerate").get<std::array<bool, morphometry::kNumFeatures>>();
    c.node_scaler.fitted_on = j.at("fitted_on").get<std::set<std::string>>();
    c.age_min = j.at("age_min").get<double>();
    c.age_max = j.at("age_max").get<double>();
    return c;
}

}  // namespace

void save_classifier(const TrainedClassifier& clf, const std::filesystem::path& path) {
    const auto& cfg = clf.model->config();
    nlohmann::json meta = {
        {"layout_version", kInputLayoutVersion},
        {"latent_dim", clf.model->latent_dim()},
        {"node_input_dim", node_input_dim(clf.model->latent_dim(), cfg.switches)},
        {"patient_input_dim", patient_input_dim(cfg.max_patches, cfg.switches)},
        {"patient_layers", kPatientMlpLayers},
        {"config", cfg},
        {"context", context_to_json(clf.context)},
    };
    detail::write_model_file(path, kMagic, kVersion, meta, *clf.model.ptr());
}

TrainedClassifier load_classifier(const std::filesystem::path& path) {
    std::string bytes;
    size_t offset = 0;
    const auto meta = detail::read_model_meta(path, kMagic, kVersion, bytes, offset);
    TrainedClassifier clf;
    try {
        if (meta.at("layout_version").get<int>() != kInputLayoutVersion) {
            throw DataError(path.string() + ": unsupported input layout version");
        }
        const auto cfg = meta.at("config").get<MILConfig>();
        clf.model = MILModel(meta.at("latent_dim").get<int>(), cfg);
        clf.context = context_from_json(meta.at("context"));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path.string() + ": malformed classifier metadata: " + e.what());
    }
    detail::load_model_tensors(bytes, offset, *clf.model, path.string());
    clf.model->eval();
    return clf;
}

}  // namespace lnm::mil
