#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "foamfed/dataset.hpp"
#include "foamfed/federation.hpp"

namespace foamfed {

// Local-loop defaults sized for desk-scale runs; a fresh model reaches a
// useful operating point within a handful of rounds at this learning rate.
inline TrainConfig simulate_default_train() {
  TrainConfig t;
  t.epochs = 4;
  t.steps_per_epoch = 8;
  t.batch_size = 25;
  t.lr = 0.05;
  return t;
}

struct SimulationConfig {
  int clients = 2;
  int rounds = 5;
  int samples = 200;       // total across clients
  int width = 96;
  int height = 96;
  PartitionMode partition = PartitionMode::kIid;
  uint64_t seed = 0;
  std::string save_dir = "simulate_out";
  TrainConfig train = simulate_default_train();  // every client trains with this
  int eval_samples = 10;
  int holdout = 50;        // held-out set evaluated with the final model
  double noise = 6.0;      // generator noise for the iid partition
  double noise_lo = 2.0;   // by-source: first source's noise ...
  double noise_hi = 25.0;  // ... last source's noise, linear in between
  double round_timeout_s = 600.0;
};

struct SimulationResult {
  TrainingLog log;
  RoundMetrics holdout;
  std::vector<int> client_rc;
};

// End-to-end federated run in one process: a real TCP server on an ephemeral
// loopback port plus N client threads over procedurally generated corpora.
// Clients join strictly one at a time so client k always holds partition k.
// The iid partition draws every sample from the same generator the synth
// corpus writer uses; by-source gives each client its own noise level.
SimulationResult run_simulation(const SimulationConfig& cfg);

}  // namespace foamfed
