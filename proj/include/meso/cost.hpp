#pragma once

// Analytic cost model: per-method FLOPs, memory, and communication closed
// forms for a single m x n weight matrix, reconciliation of those forms
// against the instrumented counters, and the transformer-scale memory
// estimator.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "meso/linalg.hpp"

namespace meso::cost {

enum class Method { Full, LoRA, ReLoRA, Flora, GaLore, EfficientGaLore, GRASS };

const char* method_name(Method m);
Method method_from_name(std::string_view name);
std::vector<Method> all_methods();

struct CostQuery {
  Method method = Method::GRASS;
  std::size_t m = 512;
  std::size_t n = 512;
  std::size_t r = 128;
  std::size_t b = 256;
  // optimizer ops per parameter; defaults to the instrumented per-element
  // cost of the Adam implementation
  double c_opt = 13.0;
};

struct CostReport {
  Method method;
  // memory, in floats
  double weights_mem = 0;
  double opt_mem = 0;
  double grad_mem = 0;
  // FLOPs per regular step / per projection-update step, table convention
  // (one multiply-add of a product counts as one FLOP)
  double flops_regular = 0;
  double flops_update = 0;
  // all-reduce payload per worker, in floats
  double comm = 0;
  std::vector<std::pair<std::string, double>> regular_terms;
};

// Closed forms for every method. The GRASS projection-update entry reports
// the table's alias-method sampling constant (m + r); the sampler implemented
// here is a linear scan costing m per draw, noted alongside.
CostReport analytic_cost(const CostQuery& q);

// ---------------------------------------------------------------------------
// Counter reconciliation
// ---------------------------------------------------------------------------

struct ReconcileTerm {
  std::string name;
  double expected = 0;
  double measured = 0;
  bool ok = false;
};

struct ReconcileReport {
  std::vector<ReconcileTerm> terms;
  bool ok = true;
};

// Compares a counter delta from one training step against the method's
// per-term closed forms. Product terms must match exactly. Supported:
// GRASS (fused sparse path) and Full (plain path).
ReconcileReport reconcile_flops(const linalg::FlopCounters& delta, const CostQuery& q,
                                bool refresh_step);

// ---------------------------------------------------------------------------
// Transformer memory estimation
// ---------------------------------------------------------------------------

struct LlamaConfig {
  std::size_t seq_len = 256;      // L
  std::size_t batch = 1;          // B
  std::size_t hidden = 5120;      // D
  std::size_t layers = 40;        // N
  std::size_t heads = 40;         // H
  std::size_t vocab = 32000;      // V
  std::size_t intermediate = 13824;
  std::size_t r = 128;
};

LlamaConfig llama_preset(std::string_view name);  // llama60m .. llama13b
std::vector<std::string> llama_preset_names();

struct LlamaMemoryReport {
  double activation_mb = 0;
  double parameter_mb = 0;
  double gradient_mb = 0;
  double optimizer_mb = 0;
  double extra_mb = 0;  // largest parameter tensor
  double total_mb = 0;
  double param_count = 0;
};

// Per-component bytes at 2 bytes per element. The projected layer set is the
// four attention matrices plus the three MLP matrices per block, projected on
// the smaller dimension; embeddings, head, and norms stay full.
LlamaMemoryReport estimate_llama_memory(const LlamaConfig& cfg, Method method);

}  // namespace meso::cost
