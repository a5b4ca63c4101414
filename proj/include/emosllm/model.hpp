#pragma once

// The neural pipeline: learnable-query downsampler (QPMapper), tiny causal
// decoder LM with LoRA adapters on the seven projection sites, input
// assembly, masked NLL, and greedy generation. Forward passes are templated
// on the scalar type so the same code runs in float for training and in
// double for finite-difference verification.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "emosllm/autograd.hpp"
#include "emosllm/prompts.hpp"
#include "emosllm/tokenizer.hpp"

namespace emosllm {

struct LMConfig {
    int vocab_size = 4096;
    int d_llm = 128;
    int layers = 4;
    int heads = 8;
    int max_seq_len = 512;
    int ff_mult = 2;
};

struct QPMapperConfig {
    int n_q = 32;
    int layers = 2;
    int heads = 8;
    int d_model = 0;  // 0 = use the encoder dimension d_ae
    int d_llm = 128;
    int d_ae = 64;
    double query_init = 0.02;
};

struct LoraConfig {
    int rank = 8;
    double alpha = 16.0;
    double dropout = 0.1;
};

enum class LoraSite { q_proj, k_proj, v_proj, o_proj, gate_proj, up_proj, down_proj };
inline constexpr std::array<LoraSite, 7> kAllLoraSites = {
    LoraSite::q_proj, LoraSite::k_proj, LoraSite::v_proj,   LoraSite::o_proj,
    LoraSite::gate_proj, LoraSite::up_proj, LoraSite::down_proj};
const char* lora_site_name(LoraSite s);

struct LMBlockIds {
    int norm1 = -1, wq = -1, wk = -1, wv = -1, wo = -1;
    int norm2 = -1, w_gate = -1, w_up = -1, w_down = -1;
};

struct LMDef {
    LMConfig cfg;
    int tok_embed = -1, pos_embed = -1, final_norm = -1, head = -1;
    std::vector<LMBlockIds> blocks;
    std::vector<int> base_param_ids() const;
};

struct QPMapperDef {
    QPMapperConfig cfg;
    int queries = -1;
    int in_proj = -1;  // -1 when d_ae == d_model
    std::vector<LMBlockIds> blocks;
    int final_norm = -1;
    int out_proj = -1;
    std::vector<int> param_ids() const;
};

struct LoraSiteIds {
    int layer = 0;
    LoraSite site = LoraSite::q_proj;
    int a_id = -1;  // A: rank x d_in
    int b_id = -1;  // B: d_out x rank, zero-initialized
    int d_in = 0, d_out = 0;
};

struct LoraSet {
    LoraConfig cfg;
    bool injected = false;
    std::vector<LoraSiteIds> sites;
    std::vector<int> param_ids() const;
    // Trainable adapter parameters: sum over sites of rank * (d_in + d_out).
    long long param_count() const;
    const LoraSiteIds* find(int layer, LoraSite site) const;
};

template <typename T>
LMDef init_lm(const LMConfig& cfg, ParamStore<T>& store, Rng& rng);

template <typename T>
QPMapperDef init_qpmapper(const QPMapperConfig& cfg, ParamStore<T>& store, Rng& rng);

template <typename T>
LoraSet inject_lora(const LMDef& lm, const LoraConfig& cfg, ParamStore<T>& store, Rng& rng);

// Phase-dependent trainable selection. P1 trains the QPMapper alone; P2/P3
// add every LoRA factor. Base LM and encoder parameters are never included.
enum class Phase { P1, P2, P3 };
const char* phase_name(Phase p);
Phase phase_from_name(const std::string& name);
std::vector<int> trainable_parameters(Phase phase, const QPMapperDef& qp, const LoraSet& lora);

// ---------------------------------------------------------------------------
// Input assembly
// ---------------------------------------------------------------------------

struct AssembledInput {
    std::vector<int> guide_ids;    // guiding phrase
    int n_q = 0;                   // audio block rows
    std::vector<int> prompt_ids;   // role-structured system + user prompt
    std::vector<int> aux_ids;      // supplementary text, ends with <|assistant|>
    std::vector<int> target_ids;   // answer tokens (empty for inference contexts)
    std::vector<std::int8_t> target_task;  // per target token: 0 = ASR span, 1 = SER span
    std::vector<std::int8_t> target_is_code;  // 1 where the token is an emotion letter
    std::string sample_name;

    int prefix_len() const {
        return int(guide_ids.size()) + n_q + int(prompt_ids.size()) + int(aux_ids.size());
    }
    int total_len() const { return prefix_len() + int(target_ids.size()); }
};

AssembledInput assemble(const Tokenizer& tk, int n_q, const std::string& system_text,
                        const std::string& user_text, const std::string& aux_text,
                        const std::string& target_text, Task task, int max_seq_len,
                        const std::string& sample_name);

// ---------------------------------------------------------------------------
// Forward passes
// ---------------------------------------------------------------------------

// One parameter leaf per tape; repeated uses share the node so gradients
// accumulate in a single buffer.
template <typename T>
class LeafCache {
public:
    LeafCache(Tape<T>& tape, ParamStore<T>& store)
        : tape_(tape), store_(store), cache_(std::size_t(store.size()), -1) {}

    typename Tape<T>::Ref get(int pid) {
        if (pid >= int(cache_.size())) cache_.resize(std::size_t(pid) + 1, -1);
        auto& slot = cache_[std::size_t(pid)];
        if (slot < 0) slot = tape_.leaf(&store_[pid].value, pid, store_[pid].trainable);
        return slot;
    }

    Tape<T>& tape() { return tape_; }
    ParamStore<T>& store() { return store_; }

private:
    Tape<T>& tape_;
    ParamStore<T>& store_;
    std::vector<typename Tape<T>::Ref> cache_;
};

// y = x W (+ scaled low-rank delta when an adapter is present).
template <typename T>
typename Tape<T>::Ref linear(LeafCache<T>& L, typename Tape<T>::Ref x, int w_id,
                             const LoraSiteIds* site, const LoraConfig* cfg, bool train_mode,
                             Rng& rng) {
    Tape<T>& tape = L.tape();
    auto out = tape.matmul_nn(x, L.get(w_id));
    if (site && cfg) {
        auto xin = train_mode ? tape.dropout(x, cfg->dropout, rng) : x;
        auto mid = tape.matmul_nt(xin, L.get(site->a_id));
        auto delta = tape.matmul_nt(mid, L.get(site->b_id));
        out = tape.add(out, tape.scale(delta, T(cfg->alpha / cfg->rank)));
    }
    return out;
}

namespace detail {

template <typename T>
typename Tape<T>::Ref transformer_block(LeafCache<T>& L, typename Tape<T>::Ref h,
                                        const LMBlockIds& b, int heads, bool causal,
                                        const LoraSet* lora, int layer, bool train_mode,
                                        Rng& rng) {
    Tape<T>& tape = L.tape();
    const LoraConfig* lc = lora && lora->injected ? &lora->cfg : nullptr;
    const auto site = [&](LoraSite s) -> const LoraSiteIds* {
        return lc ? lora->find(layer, s) : nullptr;
    };
    auto n1 = tape.rmsnorm(h, L.get(b.norm1));
    auto q = linear(L, n1, b.wq, site(LoraSite::q_proj), lc, train_mode, rng);
    auto k = linear(L, n1, b.wk, site(LoraSite::k_proj), lc, train_mode, rng);
    auto v = linear(L, n1, b.wv, site(LoraSite::v_proj), lc, train_mode, rng);
    auto att = tape.attention(q, k, v, heads, causal);
    h = tape.add(h, linear(L, att, b.wo, site(LoraSite::o_proj), lc, train_mode, rng));
    auto n2 = tape.rmsnorm(h, L.get(b.norm2));
    auto gated = tape.mul(
        tape.silu(linear(L, n2, b.w_gate, site(LoraSite::gate_proj), lc, train_mode, rng)),
        linear(L, n2, b.w_up, site(LoraSite::up_proj), lc, train_mode, rng));
    h = tape.add(h, linear(L, gated, b.w_down, site(LoraSite::down_proj), lc, train_mode, rng));
    return h;
}

}  // namespace detail

// FeatureSequence -> n_q x d_llm. No positional encodings are applied inside,
// so the query outputs are invariant to frame order.
template <typename T>
typename Tape<T>::Ref qpmapper_forward(const QPMapperDef& qp, LeafCache<T>& L,
                                       typename Tape<T>::Ref features) {
    Tape<T>& tape = L.tape();
    const Mat<T>& F = tape.val(features);
    if (F.cols != qp.cfg.d_ae) throw ConfigError("qpmapper: feature dim mismatch");
    if (F.rows < 1) throw InvalidInputError("qpmapper: empty feature sequence");
    for (T x : F.a)
        if (!std::isfinite(double(x))) throw NumericError("qpmapper: non-finite input feature");
    Rng unused(0);
    auto h = features;
    if (qp.in_proj >= 0) h = tape.matmul_nn(h, L.get(qp.in_proj));
    h = tape.concat_rows({h, L.get(qp.queries)});
    for (int l = 0; l < int(qp.blocks.size()); ++l)
        h = detail::transformer_block(L, h, qp.blocks[std::size_t(l)], qp.cfg.heads,
                                      /*causal=*/false, nullptr, l, false, unused);
    h = tape.rmsnorm(h, L.get(qp.final_norm));
    const int n = tape.val(h).rows;
    auto queries_out = tape.slice_rows(h, n - qp.cfg.n_q, n);
    return tape.matmul_nn(queries_out, L.get(qp.out_proj));
}

// Embeds [guide, audio, prompt, aux, target-prefix], adds learned positions,
// and runs the causal decoder stack. extra_ids extends the token tail (used
// during generation). Returns the final hidden states (n x d_llm).
template <typename T>
typename Tape<T>::Ref lm_hidden_forward(const LMDef& lm, const LoraSet* lora, LeafCache<T>& L,
                                        const AssembledInput& in,
                                        typename Tape<T>::Ref audio_block,
                                        const std::vector<int>& extra_ids, bool train_mode,
                                        Rng& rng) {
    Tape<T>& tape = L.tape();
    std::vector<int> tail;
    tail.reserve(in.prompt_ids.size() + in.aux_ids.size() + in.target_ids.size() +
                 extra_ids.size());
    tail.insert(tail.end(), in.prompt_ids.begin(), in.prompt_ids.end());
    tail.insert(tail.end(), in.aux_ids.begin(), in.aux_ids.end());
    tail.insert(tail.end(), in.target_ids.begin(), in.target_ids.end());
    tail.insert(tail.end(), extra_ids.begin(), extra_ids.end());

    auto embed_tok = L.get(lm.tok_embed);
    std::vector<typename Tape<T>::Ref> parts;
    if (!in.guide_ids.empty()) parts.push_back(tape.embedding(embed_tok, in.guide_ids));
    if (in.n_q > 0) {
        if (audio_block < 0) throw ConfigError("lm_forward: missing audio block");
        parts.push_back(audio_block);
    }
    if (!tail.empty()) parts.push_back(tape.embedding(embed_tok, tail));
    if (parts.empty()) throw InvalidInputError("lm_forward: empty input");
    auto h = parts.size() == 1 ? parts[0] : tape.concat_rows(parts);

    const int n = tape.val(h).rows;
    if (n > lm.cfg.max_seq_len)
        throw DataError("sequence of " + std::to_string(n) + " tokens exceeds max_seq_len (" +
                        in.sample_name + ")");
    h = tape.add(h, tape.slice_rows(L.get(lm.pos_embed), 0, n));
    for (int l = 0; l < int(lm.blocks.size()); ++l)
        h = detail::transformer_block(L, h, lm.blocks[std::size_t(l)], lm.cfg.heads,
                                      /*causal=*/true, lora, l, train_mode, rng);
    return tape.rmsnorm(h, L.get(lm.final_norm));
}

template <typename T>
typename Tape<T>::Ref lm_logits(const LMDef& lm, LeafCache<T>& L, typename Tape<T>::Ref hidden,
                                int row0, int row1) {
    Tape<T>& tape = L.tape();
    return tape.matmul_nn(tape.slice_rows(hidden, row0, row1), L.get(lm.head));
}

// ---------------------------------------------------------------------------
// Training loss and generation
// ---------------------------------------------------------------------------

struct NllBreakdown {
    double sum_nll_asr = 0.0;
    double sum_nll_ser = 0.0;
    double sum_nll_code = 0.0;  // emotion-letter tokens only
    int n_asr = 0;
    int n_ser = 0;
    int n_code = 0;
    double total_nll() const { return sum_nll_asr + sum_nll_ser; }
    int total_tokens() const { return n_asr + n_ser; }
};

// Next-token NLL over the target span. Positions tagged ASR are weighted
// w_asr_tok, SER positions w_ser_tok (weights already normalized by the
// caller across the batch). Returns the 1x1 loss node, or -1 when the sample
// has no target tokens (the empty average is defined as zero loss).
template <typename T>
typename Tape<T>::Ref forward_nll(const LMDef& lm, const LoraSet* lora, LeafCache<T>& L,
                                  const AssembledInput& in, typename Tape<T>::Ref audio_block,
                                  double w_asr_tok, double w_ser_tok, bool train_mode, Rng& rng,
                                  NllBreakdown* breakdown) {
    Tape<T>& tape = L.tape();
    if (in.target_ids.empty()) return -1;
    auto hidden = lm_hidden_forward(lm, lora, L, in, audio_block, {}, train_mode, rng);
    // Logits at position p predict the token at p+1, so the rows predicting
    // the target span are [target_start - 1, end - 1).
    const int tstart = in.prefix_len();
    const int tend = in.total_len();
    auto logits = lm_logits(lm, L, hidden, tstart - 1, tend - 1);
    std::vector<T> weights(in.target_ids.size());
    for (std::size_t i = 0; i < in.target_ids.size(); ++i)
        weights[i] = T(in.target_task[i] == 0 ? w_asr_tok : w_ser_tok);
    std::vector<T> nll;
    nll.reserve(in.target_ids.size());
    auto loss = tape.cross_entropy(logits, in.target_ids, std::move(weights), &nll);
    if (!std::isfinite(double(tape.val(loss).at(0, 0))))
        throw NumericError("forward_nll: non-finite loss (" + in.sample_name + ")");
    if (breakdown) {
        for (std::size_t i = 0; i < nll.size(); ++i) {
            if (in.target_task[i] == 0) {
                breakdown->sum_nll_asr += double(nll[i]);
                breakdown->n_asr += 1;
            } else {
                breakdown->sum_nll_ser += double(nll[i]);
                breakdown->n_ser += 1;
            }
            if (i < in.target_is_code.size() && in.target_is_code[i]) {
                breakdown->sum_nll_code += double(nll[i]);
                breakdown->n_code += 1;
            }
        }
    }
    return loss;
}

// Greedy decoding. The context's target_ids act as a forced answer prefix.
// Generation stops once the answer region (prefix + generated) contains
// stop_pipe_count '|' tokens, or after max_new_tokens.
template <typename T>
std::vector<int> generate(const LMDef& lm, const LoraSet* lora, const QPMapperDef& qp,
                          ParamStore<T>& store, const Mat<T>& features,
                          const AssembledInput& context, const Tokenizer& tk,
                          int max_new_tokens, int stop_pipe_count) {
    if (context.prefix_len() + int(context.target_ids.size()) + max_new_tokens >
        lm.cfg.max_seq_len)
        throw DataError("generate: context plus budget exceeds max_seq_len (" +
                        context.sample_name + ")");
    Rng unused(0);
    int pipes = 0;
    for (int id : context.target_ids)
        if (id == tk.pipe_id()) ++pipes;
    std::vector<int> generated;
    while (int(generated.size()) < max_new_tokens) {
        Tape<T> tape(/*grad_enabled=*/false);
        LeafCache<T> L(tape, store);
        auto feat = tape.constant(features);
        auto audio = context.n_q > 0 ? qpmapper_forward(qp, L, feat) : -1;
        auto hidden = lm_hidden_forward(lm, lora, L, context, audio, generated,
                                        /*train_mode=*/false, unused);
        const int n = tape.val(hidden).rows;
        auto logits = lm_logits(lm, L, hidden, n - 1, n);
        const Mat<T>& row = tape.val(logits);
        int best = 0;
        for (int j = 1; j < row.cols; ++j)
            if (row.at(0, j) > row.at(0, best)) best = j;
        generated.push_back(best);
        if (best == tk.pipe_id()) {
            ++pipes;
            if (pipes >= stop_pipe_count) break;
        }
    }
    return generated;
}

}  // namespace emosllm
