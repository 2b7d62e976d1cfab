#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "foamfed/dataset.hpp"
#include "foamfed/metrics.hpp"
#include "foamfed/model.hpp"
#include "foamfed/tensor.hpp"

namespace foamfed {

// One client's contribution to a round.
struct ClientUpdate {
  ModelParams params;
  uint64_t n_samples = 0;
  RoundMetrics metrics;
};

struct ServerConfig {
  int rounds = 5;
  double fraction_fit = 1.0;
  double fraction_eval = 1.0;
  int min_fit = 1;
  int min_eval = 1;
  int min_available = 1;
  std::string save_dir;
  ModelParams model_config;         // manifest the aggregate is validated against
  std::string initial_checkpoint;   // empty = zero-initialized from model_config
  std::string listen_address = "127.0.0.1:8765";
  TrainConfig fit_config;           // broadcast inside FitInstruction
  int eval_samples = 10;
  bool run_eval_rounds = true;
  double round_timeout_s = 600.0;
  // Invoked once the listener is bound, before any round runs. Lets callers
  // using an ephemeral port ("host:0") discover the real one.
  std::function<void(int)> on_listening;
};

struct TrainingLog {
  std::vector<RoundMetrics> fit_rounds;
  std::vector<RoundMetrics> eval_rounds;
  std::vector<std::string> checkpoint_paths;
  ModelParams final_params;
  int bound_port = 0;  // actual listen port (useful with ephemeral binds)
};

// Sample-count-weighted average of parameters and metrics: every scalar of
// the result equals sum_k (n_k / n) * theta_k, accumulated in f64 in client
// order. Returns nullopt (with a logged warning) for an empty update list;
// throws on manifest mismatch.
std::optional<std::pair<ModelParams, RoundMetrics>> aggregate_fit(
    int round, const std::vector<ClientUpdate>& updates);

// Weighted metric average by n_samples, same convention as aggregate_fit.
RoundMetrics weighted_metrics(const std::vector<std::pair<RoundMetrics, uint64_t>>& entries);

// Validates tensors against the manifest, excluding (with a warning) any
// whose name or shape does not match, and atomically writes the wire encoding
// to save_dir/federated_round_<round>.fp. Returns the path.
std::string save_aggregated_model(const std::string& save_dir, int round,
                                  const ModelParams& params, const ModelParams& manifest);

// Runs the synchronous federated loop: wait for min_available joins, then per
// round select ceil(fraction_fit * available) clients round-robin by join
// order, broadcast FitInstruction, collect updates (stragglers past the
// timeout and dropped connections are excluded; if fewer than min_fit remain
// the round is retried once, then the run aborts), aggregate, checkpoint,
// append a CSV row; optionally run a symmetric evaluate round; after the last
// round broadcast Shutdown with the final model.
TrainingLog server_run(const ServerConfig& cfg);

struct ClientConfig {
  std::string server_address;
  TrainConfig train;              // local training configuration
  std::string model_out;          // where the final model lands ("" = skip)
  int connect_attempts = 3;
  double backoff_base_s = 0.5;
  // Invoked after the join handshake completes. Callers that need a stable
  // client-id-to-dataset mapping start clients one join at a time with this.
  std::function<void()> on_joined;
};

// Join loop: receive params, train or evaluate on the private dataset, reply.
// Returns 0 after a clean Shutdown, nonzero when the connection is lost and
// retries are exhausted. Raw samples never leave the process.
int client_run(const ClientConfig& cfg, const std::vector<SamplePair>& data);

}  // namespace foamfed
