#include "peftlad/gradcheck_suite.hpp"

#include "peftlad/grad_check.hpp"
#include "peftlad/model.hpp"
#include "peftlad/trainer.hpp"

namespace peftlad {

namespace {

// A tiny but fully wired model: 2 layers, width 8, 2 heads, both adapter
// kinds attachable. All checks run in double precision.
struct Workbench {
    ModelConfig cfg;
    ModelParams<double> params;
    HeadParams<double> head;
    TokenizedSequence seq;
    std::vector<int> labels;

    explicit Workbench(ModelStyle style, std::uint64_t seed) {
        cfg.style = style;
        cfg.layers = 2;
        cfg.hidden = 8;
        cfg.heads = 2;
        cfg.ffn = 16;
        cfg.vocab_size = 11;
        cfg.max_len = 16;
        cfg.seed = seed;
        params = init_parameters<double>(cfg);
        head = init_head<double>(cfg);
        seq.ids = style == ModelStyle::masked ? std::vector<int>{2, 5, 7, 3, 9, 4}
                                              : std::vector<int>{5, 7, 3, 9, 4};
        seq.mask.assign(seq.ids.size(), 1);
        seq.selected_index = style == ModelStyle::masked ? 0 : seq.ids.size() - 1;
        labels = {1};
    }

    Tensor<double> loss(const PeftState<double>* peft) const {
        Tensor<double> logits = sequence_logits(params, cfg, peft, head, seq);
        return cross_entropy_mean(rows_stack(std::vector<Tensor<double>>{logits}), labels);
    }
};

// The default step balances truncation against roundoff for composite losses
// of order one: central differences lose ~ulp(loss)/eps to cancellation,
// which at 1e-6 would swamp coordinates whose true gradient is ~1e-8.
GradCheckCase check(const std::string& name,
                    const std::function<Tensor<double>(const std::vector<Tensor<double>>&)>& f,
                    std::vector<Tensor<double>> inputs, double tolerance = 1e-4, double eps = 1e-4) {
    GradCheckCase result;
    result.name = name;
    result.tolerance = tolerance;
    result.max_rel_error = grad_check(f, std::move(inputs), eps).max_rel_error;
    result.passed = result.max_rel_error < tolerance;
    return result;
}

} // namespace

std::vector<GradCheckCase> run_gradcheck_suite() {
    std::vector<GradCheckCase> cases;
    Rng rng(20240811);

    // Core ops first: a product reduced to a scalar, and the softmax +
    // cross-entropy composite that the training loss leans on.
    {
        Tensor<double> a = random_normal<double>({3, 4}, 1.0, rng);
        Tensor<double> b = random_normal<double>({4, 2}, 1.0, rng);
        cases.push_back(check(
            "matmul",
            [](const std::vector<Tensor<double>>& in) { return sum(matmul(in[0], in[1])); }, {a, b}, 1e-6,
            1e-5));
    }
    {
        Tensor<double> logits = random_normal<double>({4, 3}, 1.0, rng);
        const std::vector<int> labels = {0, 2, 1, 2};
        cases.push_back(check(
            "softmax_cross_entropy",
            [labels](const std::vector<Tensor<double>>& in) { return cross_entropy_mean(in[0], labels); },
            {logits}, 1e-6, 1e-6));
    }
    {
        Tensor<double> x = random_normal<double>({3, 8}, 1.0, rng);
        Tensor<double> gamma = random_normal<double>({8}, 0.5, rng);
        Tensor<double> beta = random_normal<double>({8}, 0.5, rng);
        Tensor<double> weights = random_normal<double>({3, 8}, 1.0, rng);
        cases.push_back(check(
            "layer_norm",
            [weights](const std::vector<Tensor<double>>& in) {
                return sum(mul(layer_norm_rows(in[0], in[1], in[2]), weights));
            },
            {x, gamma, beta}));
    }

    // Model-level checks share one masked workbench with LoRA on every
    // attention target, so gradients cross the adapters and the base path.
    {
        Workbench bench(ModelStyle::masked, 7);
        PeftChoice choice;
        choice.kind = PeftKind::lora;
        choice.lora.rank = 2;
        choice.lora.alpha = 4.0;
        choice.lora.targets = {LoraTarget::query, LoraTarget::key, LoraTarget::value};
        PeftState<double> peft = init_peft<double>(bench.cfg, choice);
        // Zero B would hide half the LoRA backward; perturb it off zero.
        for (auto& [key, adapter] : peft.lora) {
            adapter.B = random_normal<double>(adapter.B.shape(), 0.05, rng, true);
        }
        auto loss_fn = [&bench, &peft](const std::vector<Tensor<double>>&) { return bench.loss(&peft); };

        BlockParams<double>& block = bench.params.blocks[0];
        cases.push_back(check("attention", loss_fn,
                              {block.query.weight, block.query.bias, block.key.weight, block.key.bias,
                               block.value.weight, block.value.bias, block.output.weight,
                               block.output.bias}));
        cases.push_back(check("feed_forward", loss_fn,
                              {block.ffn_in.weight, block.ffn_in.bias, block.ffn_out.weight,
                               block.ffn_out.bias}));
        cases.push_back(check("layer_norm_params", loss_fn,
                              {block.norm_attn.gamma, block.norm_attn.beta, block.norm_ffn.gamma,
                               block.norm_ffn.beta}));
        cases.push_back(check("embeddings", loss_fn,
                              {bench.params.token_embedding, bench.params.pos_embedding}));

        std::vector<Tensor<double>> lora_params;
        for (auto& [key, adapter] : peft.lora) {
            lora_params.push_back(adapter.B);
            lora_params.push_back(adapter.A);
        }
        cases.push_back(check("lora", loss_fn, std::move(lora_params)));
        cases.push_back(check("classifier_loss", loss_fn, {bench.head.weight, bench.head.bias}));
    }

    // ReFT on an autoregressive workbench: suffix intervention at the last
    // token, gradients through R (twice), W, and b.
    {
        Workbench bench(ModelStyle::autoregressive, 11);
        PeftChoice choice;
        choice.kind = PeftKind::reft;
        choice.reft.rank = 3;
        PeftState<double> peft = init_peft<double>(bench.cfg, choice);
        auto loss_fn = [&bench, &peft](const std::vector<Tensor<double>>&) { return bench.loss(&peft); };
        std::vector<Tensor<double>> reft_params;
        for (auto& [layer, iv] : peft.reft) {
            reft_params.push_back(iv.R);
            reft_params.push_back(iv.W);
            reft_params.push_back(iv.b);
        }
        cases.push_back(check("reft", loss_fn, std::move(reft_params)));
    }

    return cases;
}

} // namespace peftlad
