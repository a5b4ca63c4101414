#include "emosllm/engine.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <thread>

#include <nlohmann/json.hpp>

#include "emosllm/checkpoint.hpp"
#include "emosllm/wav_io.hpp"

namespace emosllm {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Bins serialization
// ---------------------------------------------------------------------------

std::string bins_to_json(const paralinguistics::TertileBins& bins) {
    json j;
    for (int f = 0; f < paralinguistics::kFeatureCount; ++f) {
        const auto& t = bins.per_feature[std::size_t(f)];
        j[paralinguistics::feature_name(paralinguistics::Feature(f))] = {
            {"t_low", t.t_low},
            {"t_high", t.t_high},
            {"fitted_on", bins.fitted_on[std::size_t(f)]}};
    }
    return j.dump(2);
}

paralinguistics::TertileBins bins_from_json(const std::string& text) {
    paralinguistics::TertileBins bins;
    const json j = json::parse(text);
    for (int f = 0; f < paralinguistics::kFeatureCount; ++f) {
        const auto& e = j.at(paralinguistics::feature_name(paralinguistics::Feature(f)));
        bins.per_feature[std::size_t(f)].t_low = e.at("t_low").get<double>();
        bins.per_feature[std::size_t(f)].t_high = e.at("t_high").get<double>();
        bins.fitted_on[std::size_t(f)] = e.at("fitted_on").get<int>();
    }
    return bins;
}

// ---------------------------------------------------------------------------
// Model construction
// ---------------------------------------------------------------------------

void build_model_defs(ModelState& state, int vocab_size, bool lora_injected) {
    Rng init_rng(mix_seed(state.cfg.seed, 0x1217));
    LMConfig lmc = state.cfg.lm;
    lmc.vocab_size = vocab_size;
    state.lm = init_lm(lmc, state.store, init_rng);
    QPMapperConfig qpc = state.cfg.qpmapper;
    qpc.d_ae = state.cfg.encoder.d_ae;
    if (qpc.d_model <= 0) qpc.d_model = qpc.d_ae;
    qpc.d_llm = lmc.d_llm;
    state.qp = init_qpmapper(qpc, state.store, init_rng);
    if (state.cfg.encoder.kind == EncoderKind::tiny_conv_transformer)
        state.tiny_encoder = init_tiny_encoder(state.cfg.encoder, state.cfg.corpus.sample_rate,
                                               state.store, init_rng);
    if (lora_injected) {
        Rng lora_rng(mix_seed(state.cfg.seed, 0x104A));
        state.lora = inject_lora(state.lm, state.cfg.lora, state.store, lora_rng);
    }
}

namespace {

paralinguistics::ParalinguisticVector measure_paralinguistics(const Waveform& w,
                                                              paralinguistics::Gender gender) {
    return paralinguistics::extract(w, gender);
}

paralinguistics::TertileBins fit_bins_on_train(const Manifest& manifest,
                                               const std::string& manifest_dir) {
    using namespace paralinguistics;
    std::array<std::vector<double>, kFeatureCount> values;
    for (const auto& rec : manifest) {
        if (rec.split != Split::train) continue;
        const Waveform w = read_wav(manifest_dir + "/" + rec.wav_path);
        const ParalinguisticVector v = measure_paralinguistics(w, rec.gender);
        values[0].push_back(v.loudness);
        if (v.mean_pitch) values[1].push_back(*v.mean_pitch);
        if (v.pitch_range) values[2].push_back(*v.pitch_range);
        if (v.jitter) values[3].push_back(*v.jitter);
        if (v.shimmer) values[4].push_back(*v.shimmer);
    }
    return fit_tertile_bins(values);
}

}  // namespace

ModelState init_model(const RunConfig& cfg, const std::string& cfg_json, const Manifest& manifest,
                      const PromptPools& pools) {
    ModelState state;
    state.cfg = cfg;
    state.cfg_json = cfg_json.empty() ? run_config_to_json(cfg) : cfg_json;
    state.pools_hash = pools.content_hash();
    state.train_rng.reseed(mix_seed(cfg.seed, 0x7124));

    state.tokenizer = build_tokenizer(manifest, prompt_vocabulary_texts(pools), cfg.vocab_limit);
    build_model_defs(state, state.tokenizer.vocab_size(), /*lora_injected=*/false);

    state.bins = fit_bins_on_train(manifest, cfg.data_dir);
    state.bins_fitted = true;

    if (state.tiny_encoder) {
        // Self-supervised warm-up on training waveforms, then freeze.
        auto& enc = *state.tiny_encoder;
        const auto train = records_of_split(manifest, Split::train);
        if (train.empty()) throw DataError("init_model: empty training split");
        AdamState opt;
        Rng rng(mix_seed(cfg.seed, 0xE2C));
        const auto ids = enc.param_ids();
        for (int step = 0; step < cfg.encoder_pretrain_steps; ++step) {
            const auto& rec = *train[std::size_t(rng.below(train.size()))];
            const Waveform w = read_wav(cfg.data_dir + "/" + rec.wav_path);
            Tape<float> tape;
            auto loss = tiny_encoder_mask_loss(enc, tape, state.store, w, 0.3, rng);
            tape.backward(loss);
            state.store.zero_grads();
            tape.harvest_param_grads([&](int pid, const Mat<float>& g) {
                kernels::axpy(state.store[pid].grad.data(), 1.0f, g.data(), g.size());
            });
            adamw_step(state.store, ids, opt, 1e-3, 0.0);
        }
        freeze(state.store, ids);
    }
    return state;
}

// ---------------------------------------------------------------------------
// Feature cache
// ---------------------------------------------------------------------------

FeatureCache::FeatureCache(const RunConfig& cfg, const ModelState* state, std::string manifest_dir)
    : cfg_(cfg), state_(state), dir_(std::move(manifest_dir)) {
    if (cfg_.encoder.kind == EncoderKind::spectral_standin)
        standin_ = std::make_unique<SpectralStandin>(cfg_.encoder, cfg_.corpus.sample_rate);
}

Mat<float> FeatureCache::encode_waveform(const Waveform& w, const std::string& id) const {
    if (standin_) return standin_->encode(w, id).values;
    if (!state_ || !state_->tiny_encoder)
        throw ConfigError("FeatureCache: tiny encoder not initialized");
    Tape<float> tape(/*grad_enabled=*/false);
    // The store is morally const here: encoder parameters are frozen.
    auto& store = const_cast<ParamStore<float>&>(state_->store);
    auto out = tiny_encoder_forward(*state_->tiny_encoder, tape, store, w);
    return tape.val(out);
}

const Mat<float>& FeatureCache::get(const UtteranceRecord& rec) {
    {
        std::lock_guard<std::mutex> lk(mu_);
        const auto it = cache_.find(rec.id);
        if (it != cache_.end()) return it->second;
    }
    const Waveform w = read_wav(dir_ + "/" + rec.wav_path);
    Mat<float> feat = encode_waveform(w, rec.id);
    std::lock_guard<std::mutex> lk(mu_);
    return cache_.emplace(rec.id, std::move(feat)).first->second;
}

void FeatureCache::prefill(const std::vector<const UtteranceRecord*>& recs, int threads) {
    std::vector<std::thread> pool;
    const int T = std::max(1, threads);
    for (int t = 0; t < T; ++t)
        pool.emplace_back([&, t] {
            for (std::size_t i = std::size_t(t); i < recs.size(); i += std::size_t(T))
                (void)get(*recs[i]);
        });
    for (auto& th : pool) th.join();
}

// ---------------------------------------------------------------------------
// Sample building
// ---------------------------------------------------------------------------

namespace {

// Thread-safe cache of measured + binned paralinguistics per utterance.
class HintCache {
public:
    HintCache(const ModelState& state, std::string dir) : state_(state), dir_(std::move(dir)) {}

    paralinguistics::BinnedFeatures get(const UtteranceRecord& rec) {
        {
            std::lock_guard<std::mutex> lk(mu_);
            const auto it = cache_.find(rec.id);
            if (it != cache_.end()) return it->second;
        }
        const Waveform w = read_wav(dir_ + "/" + rec.wav_path);
        const auto v = measure_paralinguistics(w, rec.gender);
        const auto binned = paralinguistics::bin_vector(v, state_.bins);
        std::lock_guard<std::mutex> lk(mu_);
        return cache_.emplace(rec.id, binned).first->second;
    }

private:
    const ModelState& state_;
    std::string dir_;
    std::map<std::string, paralinguistics::BinnedFeatures> cache_;
    std::mutex mu_;
};

UtteranceView view_of(const UtteranceRecord& rec) {
    UtteranceView v;
    v.id = rec.id;
    v.transcript = rec.transcript;
    v.emotion = rec.emotion;
    v.gender = rec.gender;
    return v;
}

bool hints_enabled(const HintSpec& h) {
    return h.n_shot > 0 || h.include_paralinguistics || h.include_gender;
}

AssembledInput build_training_input(const ModelState& state, const UtteranceRecord& rec,
                                    Task task, const PromptPools& pools, HintCache& hints,
                                    std::uint64_t seed) {
    Rng rng(seed);
    std::optional<paralinguistics::BinnedFeatures> binned;
    if (hints_enabled(state.cfg.hints)) binned = hints.get(rec);
    const TaskSample s =
        build_sample(view_of(rec), task, state.cfg.hints, pools, binned, rng);
    return assemble(state.tokenizer, state.qp.cfg.n_q, system_prompt(), s.user_prompt,
                    s.aux_text, s.target_text, task, state.lm.cfg.max_seq_len, rec.id);
}

struct GradBuffer {
    std::vector<Mat<float>> grads;

    void accumulate(Tape<float>& tape, const ParamStore<float>& store) {
        if (grads.size() < std::size_t(store.size())) grads.resize(std::size_t(store.size()));
        tape.harvest_param_grads([&](int pid, const Mat<float>& g) {
            auto& slot = grads[std::size_t(pid)];
            if (slot.empty()) slot = Mat<float>(g.rows, g.cols);
            kernels::axpy(slot.data(), 1.0f, g.data(), g.size());
        });
    }

    void merge_into(ParamStore<float>& store) {
        for (std::size_t pid = 0; pid < grads.size(); ++pid) {
            if (grads[pid].empty()) continue;
            kernels::axpy(store[int(pid)].grad.data(), 1.0f, grads[pid].data(),
                          grads[pid].size());
            grads[pid].zero();
        }
    }
};

struct PlannedSample {
    const UtteranceRecord* rec = nullptr;
    Task task = Task::ASR;
    std::uint64_t build_seed = 0;
    std::uint64_t dropout_seed = 0;
    AssembledInput input;
    NllBreakdown nll;
};

}  // namespace

// ---------------------------------------------------------------------------
// Validation loss
// ---------------------------------------------------------------------------

double validation_ser_loss(ModelState& state, const Manifest& manifest, Split split,
                           const PromptPools& pools, FeatureCache& cache, std::uint64_t seed) {
    const auto recs = records_of_split(manifest, split);
    if (recs.empty()) throw DataError("validation_ser_loss: empty split");
    HintCache hints(state, state.cfg.data_dir);

    double sum = 0.0;
    long long count = 0;
    std::mutex agg_mu;
    const int T = std::max(1, state.cfg.threads);
    std::vector<std::thread> pool;
    std::vector<std::string> errors;
    for (int t = 0; t < T; ++t)
        pool.emplace_back([&, t] {
            double local_sum = 0.0;
            long long local_count = 0;
            for (std::size_t i = std::size_t(t); i < recs.size(); i += std::size_t(T)) {
                try {
                    const auto& rec = *recs[i];
                    AssembledInput in = build_training_input(
                        state, rec, Task::JOINT, pools, hints, mix_seed(seed, i, 0x7A));
                    Tape<float> tape;
                    LeafCache<float> L(tape, state.store);
                    auto feat = tape.constant(cache.get(rec).cast<float>());
                    auto audio = qpmapper_forward(state.qp, L, feat);
                    NllBreakdown nll;
                    Rng unused(0);
                    (void)forward_nll(state.lm, &state.lora, L, in, audio, 0.0, 1.0,
                                      /*train_mode=*/false, unused, &nll);
                    local_sum += nll.sum_nll_code;
                    local_count += nll.n_code;
                } catch (const std::exception& e) {
                    std::lock_guard<std::mutex> lk(agg_mu);
                    errors.emplace_back(e.what());
                    return;
                }
            }
            std::lock_guard<std::mutex> lk(agg_mu);
            sum += local_sum;
            count += local_count;
        });
    for (auto& th : pool) th.join();
    if (!errors.empty()) throw DataError("validation failed: " + errors.front());
    if (count == 0) return 0.0;
    return sum / double(count);
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

std::string EpochMetrics::to_json() const {
    json j{{"phase", phase},
           {"epoch", epoch},
           {"train_loss_asr", train_loss_asr},
           {"train_loss_ser", train_loss_ser},
           {"train_loss", train_loss},
           {"val_ser_loss", val_ser_loss},
           {"lr", lr},
           {"w_asr", w_asr},
           {"w_ser", w_ser},
           {"optimizer_steps", optimizer_steps}};
    return j.dump();
}

PhaseReport run_phase(ModelState& state, Phase phase, const Manifest& manifest,
                      const PromptPools& pools, FeatureCache& cache, const MetricsSink& sink) {
    const PhaseConfig& pc = phase == Phase::P1   ? state.cfg.p1
                            : phase == Phase::P2 ? state.cfg.p2
                                                 : state.cfg.p3;
    if (pc.epochs < 1) throw ConfigError("run_phase: epochs must be >= 1");

    const auto train = records_of_split(manifest, Split::train);
    if (train.empty()) throw DataError("run_phase: empty training split");
    for (const auto* r : train)
        if (r->split != Split::train) throw DataError("run_phase: non-train record in batch");

    // Inject adapters at the P2 boundary.
    if (phase != Phase::P1 && !state.lora.injected) {
        Rng lora_rng(mix_seed(state.cfg.seed, 0x104A));
        state.lora = inject_lora(state.lm, state.cfg.lora, state.store, lora_rng);
    }

    // Trainable selection; everything else is frozen for the phase.
    const std::vector<int> trainable = trainable_parameters(phase, state.qp, state.lora);
    for (int id = 0; id < state.store.size(); ++id) state.store[id].trainable = false;
    for (int id : trainable) state.store[id].trainable = true;

    // Record frozen-group checksums for the soundness check.
    const auto lm_ids = state.lm.base_param_ids();
    const auto enc_ids =
        state.tiny_encoder ? state.tiny_encoder->param_ids() : std::vector<int>{};
    const std::uint64_t lm_sum0 = state.store.checksum_group(lm_ids);
    const std::uint64_t enc_sum0 = state.store.checksum_group(enc_ids);

    cache.prefill(train, state.cfg.threads);
    HintCache hints(state, state.cfg.data_dir);

    const int eff_batch = state.cfg.micro_batch * state.cfg.grad_accum;
    const long long batches_per_epoch = ((long long)train.size() + eff_batch - 1) / eff_batch;
    const bool restart = pc.restart_schedule;
    if (restart && state.resume_epoch == 0) state.adam = AdamState{};
    const long long step_offset = restart ? 0 : state.adam.step;
    const long long total_steps = step_offset + batches_per_epoch * pc.epochs;

    EarlyStopState early;
    early.patience = pc.patience;
    if (state.resume_epoch > 0 && state.early_best > 0.0) {
        early.best = state.early_best;
        early.epochs_since_improvement = state.early_since;
    }

    PhaseReport report;
    report.phase = phase;
    const int phase_idx = int(phase);
    const std::string phase_tag = phase_name(phase);
    const std::string run_dir = state.cfg.run_dir;
    std::error_code ec;
    fs::create_directories(run_dir, ec);

    double best_val = state.resume_epoch > 0 && state.early_best > 0.0
                          ? state.early_best
                          : std::numeric_limits<double>::infinity();

    for (int epoch = state.resume_epoch + 1; epoch <= pc.epochs; ++epoch) {
        const auto [w_asr, w_ser] =
            phase == Phase::P3 ? asr_loss_weight(epoch, pc.epochs) : std::make_pair(1.0, 0.0);

        // Epoch plan: shuffled order and per-sample task assignment.
        std::vector<std::size_t> order(train.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng epoch_rng(mix_seed(state.cfg.seed, 0xE70C + std::uint64_t(phase_idx),
                               std::uint64_t(epoch)));
        epoch_rng.shuffle(order);

        double ep_nll_asr = 0.0, ep_nll_ser = 0.0;
        long long ep_n_asr = 0, ep_n_ser = 0;
        double last_lr = 0.0;

        for (long long b = 0; b < batches_per_epoch; ++b) {
            const std::size_t lo = std::size_t(b) * std::size_t(eff_batch);
            const std::size_t hi = std::min(train.size(), lo + std::size_t(eff_batch));
            std::vector<PlannedSample> batch;
            batch.reserve(hi - lo);
            long long count_asr = 0, count_ser = 0;
            for (std::size_t k = lo; k < hi; ++k) {
                PlannedSample ps;
                ps.rec = train[order[k]];
                const std::uint64_t sseed =
                    mix_seed(state.cfg.seed,
                             (std::uint64_t(phase_idx) << 40) | (std::uint64_t(epoch) << 24) |
                                 std::uint64_t(k),
                             0x5E);
                Rng task_rng(sseed);
                if (phase == Phase::P3) {
                    if (task_rng.uniform() < w_asr)
                        ps.task = Task::ASR;
                    else
                        ps.task = task_rng.uniform() < state.cfg.p3_joint_fraction ? Task::JOINT
                                                                                   : Task::SER;
                } else {
                    ps.task = Task::ASR;
                }
                ps.build_seed = mix_seed(sseed, 0xB1);
                ps.dropout_seed = mix_seed(sseed, 0xD0);
                ps.input = build_training_input(state, *ps.rec, ps.task, pools, hints,
                                                ps.build_seed);
                for (std::int8_t tag : ps.input.target_task)
                    (tag == 0 ? count_asr : count_ser) += 1;
                batch.push_back(std::move(ps));
            }

            const double w_asr_tok = count_asr > 0 ? w_asr / double(count_asr) : 0.0;
            const double w_ser_tok = count_ser > 0 ? w_ser / double(count_ser) : 0.0;

            // Parallel forward/backward into per-thread buffers, merged in
            // thread order for determinism.
            const int T = std::max(1, state.cfg.threads);
            std::vector<GradBuffer> buffers(static_cast<std::size_t>(T));
            std::vector<std::thread> pool;
            std::vector<std::string> errors(static_cast<std::size_t>(T));
            for (int t = 0; t < T; ++t)
                pool.emplace_back([&, t] {
                    try {
                        for (std::size_t i = std::size_t(t); i < batch.size();
                             i += std::size_t(T)) {
                            PlannedSample& ps = batch[i];
                            Tape<float> tape;
                            LeafCache<float> L(tape, state.store);
                            auto feat = tape.constant(cache.get(*ps.rec).cast<float>());
                            auto audio = qpmapper_forward(state.qp, L, feat);
                            Rng drop_rng(ps.dropout_seed);
                            auto loss =
                                forward_nll(state.lm, &state.lora, L, ps.input, audio,
                                            w_asr_tok, w_ser_tok, /*train_mode=*/true,
                                            drop_rng, &ps.nll);
                            if (loss >= 0) {
                                tape.backward(loss);
                                buffers[std::size_t(t)].accumulate(tape, state.store);
                            }
                        }
                    } catch (const std::exception& e) {
                        errors[std::size_t(t)] = e.what();
                    }
                });
            for (auto& th : pool) th.join();
            for (const auto& e : errors)
                if (!e.empty())
                    throw NumericError("training step aborted (last good checkpoint: " +
                                       run_dir + "/" + phase_tag + "_last.ckpt): " + e);

            state.store.zero_grads();
            for (auto& buf : buffers) buf.merge_into(state.store);

            const long long step = step_offset + (epoch - 1) * batches_per_epoch + b;
            const double mult = lr_multiplier(double(step) + 0.5, double(total_steps),
                                              pc.warmup_fraction);
            last_lr = pc.lr_peak * mult;
            adamw_step(state.store, trainable, state.adam, last_lr, pc.weight_decay);

            for (const auto& ps : batch) {
                ep_nll_asr += ps.nll.sum_nll_asr;
                ep_nll_ser += ps.nll.sum_nll_ser;
                ep_n_asr += ps.nll.n_asr;
                ep_n_ser += ps.nll.n_ser;
            }
        }

        EpochMetrics m;
        m.phase = phase_tag;
        m.epoch = epoch;
        m.train_loss_asr = ep_n_asr > 0 ? ep_nll_asr / double(ep_n_asr) : 0.0;
        m.train_loss_ser = ep_n_ser > 0 ? ep_nll_ser / double(ep_n_ser) : 0.0;
        m.train_loss = mix_losses(m.train_loss_asr, m.train_loss_ser, {w_asr, w_ser});
        m.val_ser_loss = validation_ser_loss(state, manifest, Split::val, pools, cache,
                                             state.cfg.eval_seed);
        m.lr = last_lr;
        m.w_asr = w_asr;
        m.w_ser = w_ser;
        m.optimizer_steps = state.adam.step;
        report.epochs.push_back(m);
        if (sink) sink(m);

        // Rolling resume checkpoint.
        state.resume_epoch = epoch;
        const bool stop = phase == Phase::P3 && early.update(m.val_ser_loss);
        state.early_best = early.best;
        state.early_since = early.epochs_since_improvement;
        save_checkpoint(state, run_dir + "/" + phase_tag + "_last.ckpt",
                        /*include_trainer=*/true);
        if (phase == Phase::P3 && m.val_ser_loss <= best_val) {
            best_val = m.val_ser_loss;
            save_checkpoint(state, run_dir + "/p3_best.ckpt");
        }
        if (stop) {
            report.early_stopped = true;
            break;
        }
    }

    // Freezing soundness: parameters outside the trainable set must be
    // bit-identical across the phase.
    if (state.store.checksum_group(lm_ids) != lm_sum0)
        throw NumericError("freezing violated: base LM changed during " + phase_tag);
    if (!enc_ids.empty() && state.store.checksum_group(enc_ids) != enc_sum0)
        throw NumericError("freezing violated: encoder changed during " + phase_tag);

    report.best_val_ser_loss = best_val;
    state.provenance.push_back(phase_tag);
    state.resume_epoch = 0;
    state.early_best = 0.0;
    state.early_since = 0;
    state.has_trainer_state = false;
    const std::string final_path = run_dir + "/" + phase_tag + ".ckpt";
    save_checkpoint(state, final_path);
    return report;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

namespace {

struct EvalContext {
    AssembledInput input;
    int stop_pipes = 2;
};

EvalContext build_eval_context(const ModelState& state, const UtteranceRecord& rec,
                               InferenceStrategy strategy, const PromptPools& pools,
                               HintCache* hints, const std::optional<std::string>& transcript,
                               std::uint64_t seed) {
    Rng rng(seed);
    std::optional<paralinguistics::BinnedFeatures> binned;
    if (hints && hints_enabled(state.cfg.hints)) binned = hints->get(rec);

    Task task = strategy == InferenceStrategy::JOINT_PREFIX ? Task::JOINT : Task::SER;
    std::string user = sample_prompt(pools.pool(task), rng);
    if (user.find("{options}") != std::string::npos) {
        std::vector<EmotionCode> codes(kAllEmotions.begin(), kAllEmotions.end());
        std::string opts = render_emotion_options(randomize_emotion_order(codes, rng));
        std::size_t pos;
        while ((pos = user.find("{options}")) != std::string::npos)
            user.replace(pos, 9, opts);
    }

    std::string aux;
    if (binned) aux += render_supplementary(*binned, state.cfg.hints, rng);
    aux += render_nshot(state.cfg.hints.n_shot, task, rng);
    if (strategy == InferenceStrategy::PROMPT_HINT) {
        if (!transcript) throw UsageError("prompt-hint requires a transcript");
        aux += prompt_hint_sentence() + "\n" + *transcript + "\n";
    }

    EvalContext ctx;
    ctx.input = assemble(state.tokenizer, state.qp.cfg.n_q, system_prompt(), user, aux,
                         /*target_text=*/"", task, state.lm.cfg.max_seq_len, rec.id);
    if (strategy == InferenceStrategy::JOINT_PREFIX) {
        if (!transcript) throw UsageError("joint-prefix requires a transcript");
        const std::string prefix = "| ASR: " + *transcript + " | Emotion:";
        ctx.input.target_ids = state.tokenizer.encode(prefix);
        ctx.input.target_task.assign(ctx.input.target_ids.size(), 0);
        ctx.stop_pipes = 3;
    }
    return ctx;
}

std::string run_generation(ModelState& state, const Mat<float>& features,
                           const EvalContext& ctx) {
    const std::vector<int> out =
        generate(state.lm, &state.lora, state.qp, state.store, features, ctx.input,
                 state.tokenizer, state.cfg.max_new_tokens, ctx.stop_pipes);
    std::vector<int> full = ctx.input.target_ids;
    full.insert(full.end(), out.begin(), out.end());
    return state.tokenizer.decode(full);
}

}  // namespace

EvalReport evaluate(ModelState& state, const Manifest& manifest, Split split,
                    const PromptPools& pools, FeatureCache& cache, const EvalOptions& opts) {
    auto recs = records_of_split(manifest, split);
    if (!opts.class_filter.empty()) {
        std::vector<const UtteranceRecord*> kept;
        for (const auto* r : recs)
            for (EmotionCode c : opts.class_filter)
                if (r->emotion == c) {
                    kept.push_back(r);
                    break;
                }
        recs = kept;
    }
    if (recs.empty()) throw DataError("evaluate: empty split");

    cache.prefill(recs, opts.threads);
    HintCache hints(state, state.cfg.data_dir);

    EvalReport report;
    report.strategy = strategy_name(opts.strategy);
    report.n = int(recs.size());
    report.samples.resize(recs.size());

    const int T = std::max(1, opts.threads);
    std::vector<std::thread> pool;
    std::vector<std::string> errors(static_cast<std::size_t>(T));
    for (int t = 0; t < T; ++t)
        pool.emplace_back([&, t] {
            try {
                for (std::size_t i = std::size_t(t); i < recs.size(); i += std::size_t(T)) {
                    const auto& rec = *recs[i];
                    SampleEval& se = report.samples[i];
                    se.id = rec.id;
                    se.label = rec.emotion;
                    const std::uint64_t seed = mix_seed(opts.eval_seed, i, 0xE7);

                    std::optional<std::string> transcript;
                    if (opts.strategy != InferenceStrategy::SER_ONLY) {
                        if (opts.use_model_asr &&
                            opts.strategy == InferenceStrategy::JOINT_PREFIX) {
                            EvalContext actx = build_eval_context(
                                state, rec, InferenceStrategy::JOINT_PREFIX, pools, &hints,
                                std::string(""), mix_seed(seed, 0xA5));
                            // Stage 1: free-running joint decoding for the
                            // transcript hypothesis.
                            actx.input.target_ids.clear();
                            actx.input.target_task.clear();
                            actx.stop_pipes = 3;
                            const std::string ans = run_generation(
                                state, cache.get(rec), actx);
                            const ParsedAnswer pa = parse_output(ans);
                            transcript = pa.asr.value_or("");
                            se.wer = word_error_rate(rec.transcript, *transcript);
                        } else {
                            transcript = rec.transcript;
                        }
                    }

                    EvalContext ctx = build_eval_context(state, rec, opts.strategy, pools,
                                                         &hints, transcript, seed);
                    se.raw_answer = run_generation(state, cache.get(rec), ctx);
                    se.parsed = parse_output(se.raw_answer);
                }
            } catch (const std::exception& e) {
                errors[std::size_t(t)] = e.what();
            }
        });
    for (auto& th : pool) th.join();
    for (const auto& e : errors)
        if (!e.empty()) throw DataError("evaluate failed: " + e);

    // Order-independent reduction in sample order.
    std::vector<std::optional<EmotionCode>> preds;
    std::vector<EmotionCode> labels;
    int malformed = 0;
    double wer_sum = 0.0;
    int wer_n = 0;
    for (const auto& se : report.samples) {
        preds.push_back(se.parsed.emotion);
        labels.push_back(se.label);
        if (se.parsed.malformed || !se.parsed.emotion) ++malformed;
        const int row = int(se.label);
        const int col = se.parsed.emotion ? int(*se.parsed.emotion) : 9;
        report.confusion[std::size_t(row)][std::size_t(col)] += 1;
        if (se.wer) {
            wer_sum += *se.wer;
            ++wer_n;
        }
    }
    report.accuracy = unweighted_accuracy(preds, labels);
    report.malformed_rate = double(malformed) / double(report.n);
    if (wer_n > 0) report.mean_wer = wer_sum / wer_n;
    return report;
}

std::string EvalReport::to_json() const {
    std::string out;
    for (const auto& se : samples) {
        json j{{"id", se.id},
               {"label", std::string(1, emotion_letter(se.label))},
               {"malformed", se.parsed.malformed},
               {"raw", se.raw_answer}};
        if (se.parsed.emotion) j["pred"] = std::string(1, emotion_letter(*se.parsed.emotion));
        if (se.parsed.asr) j["asr"] = *se.parsed.asr;
        if (!se.parsed.reason.empty()) j["reason"] = se.parsed.reason;
        if (se.wer) j["wer"] = *se.wer;
        out += j.dump() + "\n";
    }
    json summary{{"summary", true},
                 {"strategy", strategy},
                 {"n", n},
                 {"accuracy", accuracy},
                 {"malformed_rate", malformed_rate}};
    if (mean_wer) summary["mean_wer"] = *mean_wer;
    json conf = json::array();
    for (const auto& row : confusion) conf.push_back(row);
    summary["confusion"] = conf;
    out += summary.dump() + "\n";
    return out;
}

std::string EvalReport::summary_line() const {
    char buf[256];
    std::snprintf(buf, sizeof buf, "strategy=%s n=%d accuracy=%.4f malformed_rate=%.4f%s%s",
                  strategy.c_str(), n, accuracy, malformed_rate,
                  mean_wer ? " mean_wer=" : "",
                  mean_wer ? std::to_string(*mean_wer).c_str() : "");
    return buf;
}

InferResult infer_single(ModelState& state, const Waveform& audio,
                         const std::optional<std::string>& transcript,
                         InferenceStrategy strategy, const PromptPools& pools,
                         std::uint64_t seed) {
    if (strategy != InferenceStrategy::SER_ONLY && !transcript)
        throw UsageError(std::string(strategy_name(strategy)) + " requires --transcript");

    FeatureCache cache(state.cfg, &state, "");
    const Mat<float> features = cache.encode_waveform(audio, "input");

    UtteranceRecord rec;
    rec.id = "input";
    rec.transcript = transcript.value_or("");
    rec.emotion = EmotionCode::N;
    rec.gender = paralinguistics::Gender::unknown;

    Rng rng(seed);
    std::optional<paralinguistics::BinnedFeatures> binned;
    if (hints_enabled(state.cfg.hints) && state.bins_fitted) {
        const auto v = measure_paralinguistics(audio, rec.gender);
        binned = paralinguistics::bin_vector(v, state.bins);
    }

    const Task task = strategy == InferenceStrategy::JOINT_PREFIX ? Task::JOINT : Task::SER;
    std::string user = sample_prompt(pools.pool(task), rng);
    std::size_t pos;
    if (user.find("{options}") != std::string::npos) {
        std::vector<EmotionCode> codes(kAllEmotions.begin(), kAllEmotions.end());
        const std::string opts = render_emotion_options(randomize_emotion_order(codes, rng));
        while ((pos = user.find("{options}")) != std::string::npos) user.replace(pos, 9, opts);
    }
    std::string aux;
    if (binned) aux += render_supplementary(*binned, state.cfg.hints, rng);
    aux += render_nshot(state.cfg.hints.n_shot, task, rng);
    if (strategy == InferenceStrategy::PROMPT_HINT)
        aux += prompt_hint_sentence() + "\n" + *transcript + "\n";

    AssembledInput in = assemble(state.tokenizer, state.qp.cfg.n_q, system_prompt(), user, aux,
                                 "", task, state.lm.cfg.max_seq_len, rec.id);
    int stop_pipes = 2;
    if (strategy == InferenceStrategy::JOINT_PREFIX) {
        in.target_ids = state.tokenizer.encode("| ASR: " + *transcript + " | Emotion:");
        in.target_task.assign(in.target_ids.size(), 0);
        stop_pipes = 3;
    }
    const std::vector<int> gen = generate(state.lm, &state.lora, state.qp, state.store,
                                          features, in, state.tokenizer,
                                          state.cfg.max_new_tokens, stop_pipes);
    std::vector<int> full = in.target_ids;
    full.insert(full.end(), gen.begin(), gen.end());
    InferResult res;
    res.raw_answer = state.tokenizer.decode(full);
    res.parsed = parse_output(res.raw_answer);
    return res;
}

// ---------------------------------------------------------------------------
// Rule-based cue oracle and feature reports
// ---------------------------------------------------------------------------

double cue_oracle_accuracy(const Manifest& manifest, const std::string& manifest_dir,
                           Split eval_split) {
    std::vector<EmotionCode> classes;
    for (const auto& rec : manifest) {
        bool seen = false;
        for (EmotionCode c : classes) seen = seen || c == rec.emotion;
        if (!seen) classes.push_back(rec.emotion);
    }

    // Measured mean pitch per utterance.
    std::map<std::string, double> pitch;
    for (const auto& rec : manifest) {
        const Waveform w = read_wav(manifest_dir + "/" + rec.wav_path);
        const auto track = paralinguistics::estimate_pitch_track(w);
        const auto stats = paralinguistics::compute_pitch_stats(track);
        pitch[rec.id] = stats ? stats->mean_pitch : 0.0;
    }

    // Tertile thresholds and majority-class map from the training split.
    std::vector<double> train_pitch;
    for (const auto& rec : manifest)
        if (rec.split == Split::train) train_pitch.push_back(pitch[rec.id]);
    if (train_pitch.size() < 3) throw DataError("cue oracle: too few training samples");
    paralinguistics::Thresholds t;
    t.t_low = paralinguistics::interpolated_percentile(train_pitch, 1.0 / 3.0);
    t.t_high = paralinguistics::interpolated_percentile(train_pitch, 2.0 / 3.0);

    std::array<std::map<EmotionCode, int>, 3> tertile_votes;
    for (const auto& rec : manifest) {
        if (rec.split != Split::train) continue;
        const int bin = int(paralinguistics::bin_feature(pitch[rec.id], t));
        tertile_votes[std::size_t(bin)][rec.emotion] += 1;
    }
    std::array<EmotionCode, 3> tertile_class{};
    for (int b = 0; b < 3; ++b) {
        EmotionCode best = classes.front();
        int best_n = -1;
        for (const auto& [c, n] : tertile_votes[std::size_t(b)])
            if (n > best_n) {
                best = c;
                best_n = n;
            }
        tertile_class[std::size_t(b)] = best;
    }

    int correct = 0, total = 0;
    for (const auto& rec : manifest) {
        if (rec.split != eval_split) continue;
        ++total;
        EmotionCode pred;
        if (const auto kw = keyword_class(rec.transcript, classes))
            pred = *kw;
        else
            pred = tertile_class[std::size_t(int(paralinguistics::bin_feature(pitch[rec.id], t)))];
        if (pred == rec.emotion) ++correct;
    }
    if (total == 0) throw DataError("cue oracle: empty eval split");
    return double(correct) / double(total);
}

void write_feature_report(const Manifest& manifest, const std::string& manifest_dir,
                          const std::string& report_path, const std::string& bins_path) {
    using namespace paralinguistics;
    std::map<std::string, ParalinguisticVector> vectors;
    std::array<std::vector<double>, kFeatureCount> train_values;
    for (const auto& rec : manifest) {
        const Waveform w = read_wav(manifest_dir + "/" + rec.wav_path);
        const ParalinguisticVector v = measure_paralinguistics(w, rec.gender);
        vectors[rec.id] = v;
        if (rec.split == Split::train) {
            train_values[0].push_back(v.loudness);
            if (v.mean_pitch) train_values[1].push_back(*v.mean_pitch);
            if (v.pitch_range) train_values[2].push_back(*v.pitch_range);
            if (v.jitter) train_values[3].push_back(*v.jitter);
            if (v.shimmer) train_values[4].push_back(*v.shimmer);
        }
    }
    const TertileBins bins = fit_tertile_bins(train_values);

    std::string out;
    for (const auto& rec : manifest) {
        const auto& v = vectors[rec.id];
        const auto binned = bin_vector(v, bins);
        json j{{"id", rec.id},
               {"split", split_name(rec.split)},
               {"gender", gender_name(v.gender)},
               {"loudness", v.loudness}};
        if (v.mean_pitch) j["mean_pitch"] = *v.mean_pitch;
        if (v.pitch_range) j["pitch_range"] = *v.pitch_range;
        if (v.jitter) j["jitter"] = *v.jitter;
        if (v.shimmer) j["shimmer"] = *v.shimmer;
        json labels;
        for (int f = 0; f < kFeatureCount; ++f)
            if (binned.labels[std::size_t(f)])
                labels[feature_name(Feature(f))] = bin_label_name(*binned.labels[std::size_t(f)]);
        j["bins"] = labels;
        out += j.dump() + "\n";
    }
    write_text_file(report_path, out);
    write_text_file(bins_path, bins_to_json(bins) + "\n");
}

}  // namespace emosllm
