#include "foamfed/federation.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <thread>

#include "foamfed/queue.hpp"
#include "foamfed/wire.hpp"

namespace foamfed {

std::optional<std::pair<ModelParams, RoundMetrics>> aggregate_fit(
    int round, const std::vector<ClientUpdate>& updates) {
  if (updates.empty()) {
    spdlog::warn("round {}: no client updates to aggregate", round);
    return std::nullopt;
  }
  uint64_t n = 0;
  for (const auto& u : updates) {
    if (u.n_samples < 1) throw std::invalid_argument("client update with zero samples");
    if (!same_manifest(u.params, updates[0].params))
      throw std::invalid_argument("client update manifests differ");
    n += u.n_samples;
  }

  // A single update is returned verbatim: the weighted mean of one tensor set
  // is itself, and going through the accumulator would disturb bits (-0.0).
  ModelParams out = updates[0].params;
  if (updates.size() > 1) {
    for (size_t ti = 0; ti < out.tensors.size(); ++ti) {
      auto& dst = out.tensors[ti].data;
      for (size_t i = 0; i < dst.size(); ++i) {
        double acc = 0.0;
        for (const auto& u : updates) {
          double wk = static_cast<double>(u.n_samples) / static_cast<double>(n);
          acc += wk * static_cast<double>(u.params.tensors[ti].data[i]);
        }
        dst[i] = static_cast<float>(acc);
      }
    }
  }

  std::vector<std::pair<RoundMetrics, uint64_t>> entries;
  entries.reserve(updates.size());
  for (const auto& u : updates) entries.emplace_back(u.metrics, u.n_samples);
  RoundMetrics agg = weighted_metrics(entries);
  spdlog::info("round {}: aggregated {} updates ({} samples): loss={:.6f} dice={:.4f}", round,
               updates.size(), n, agg.loss, agg.dice);
  return std::make_pair(std::move(out), agg);
}

RoundMetrics weighted_metrics(const std::vector<std::pair<RoundMetrics, uint64_t>>& entries) {
  RoundMetrics out;
  uint64_t n = 0;
  for (const auto& [m, nk] : entries) n += nk;
  if (n == 0) return out;
  for (const auto& [m, nk] : entries) {
    double wk = static_cast<double>(nk) / static_cast<double>(n);
    out.loss += wk * m.loss;
    out.iou += wk * m.iou;
    out.pixel_accuracy += wk * m.pixel_accuracy;
    out.dice += wk * m.dice;
  }
  return out;
}

std::string save_aggregated_model(const std::string& save_dir, int round,
                                  const ModelParams& params, const ModelParams& manifest) {
  namespace fs = std::filesystem;
  fs::create_directories(save_dir);

  ModelParams validated;
  if (manifest.tensors.empty()) {
    validated = params;
  } else {
    for (const auto& want : manifest.tensors) {
      const NamedTensor* got = params.find(want.name);
      if (!got) {
        spdlog::warn("round {}: tensor '{}' missing from aggregate, skipping", round, want.name);
        continue;
      }
      if (got->shape != want.shape) {
        spdlog::warn("round {}: tensor '{}' has unexpected shape, excluded", round, want.name);
        continue;
      }
      validated.tensors.push_back(*got);
    }
    for (const auto& t : params.tensors)
      if (!manifest.find(t.name))
        spdlog::warn("round {}: unknown tensor '{}' excluded from checkpoint", round, t.name);
  }

  std::string path =
      (fs::path(save_dir) / ("federated_round_" + std::to_string(round) + ".fp")).string();
  save_checkpoint(path, validated);
  return path;
}

namespace {

struct Command {
  enum Kind { kFit, kEvaluate, kShutdown } kind = kFit;
  uint32_t round = 0;
  std::shared_ptr<const std::vector<uint8_t>> frame_bytes;
};

struct RoundResult {
  uint32_t round = 0;
  uint32_t client_id = 0;
  bool is_eval = false;
  bool ok = false;
  FitResultMsg fit;
  EvaluateResultMsg eval;
};

struct Handler {
  uint32_t id = 0;
  std::unique_ptr<TcpStream> stream;
  BoundedQueue<Command> mailbox{8};
  std::thread thread;
};

struct ServerState {
  std::mutex mu;
  std::condition_variable joined_cv;
  std::map<uint32_t, std::shared_ptr<Handler>> live;  // by client id
  std::vector<std::shared_ptr<Handler>> all;
  uint32_t next_id = 0;
  BoundedQueue<RoundResult> results{4096};
};

void handler_main(std::shared_ptr<Handler> h, ServerState* st) {
  auto fail_command = [&](const Command& cmd) {
    if (cmd.kind == Command::kShutdown) return;
    RoundResult res;
    res.round = cmd.round;
    res.client_id = h->id;
    res.is_eval = cmd.kind == Command::kEvaluate;
    res.ok = false;
    st->results.push(std::move(res));
  };

  std::optional<Command> in_flight;
  try {
    while (auto cmd = h->mailbox.pop()) {
      in_flight = *cmd;
      MsgType t = cmd->kind == Command::kFit          ? MsgType::kFitInstruction
                  : cmd->kind == Command::kEvaluate   ? MsgType::kEvaluateInstruction
                                                      : MsgType::kShutdown;
      write_frame(*h->stream, Frame{t, *cmd->frame_bytes});
      if (cmd->kind == Command::kShutdown) break;

      Frame reply = read_frame(*h->stream);
      RoundResult res;
      res.round = cmd->round;
      res.client_id = h->id;
      res.is_eval = cmd->kind == Command::kEvaluate;
      if (cmd->kind == Command::kFit && reply.type == MsgType::kFitResult) {
        res.fit = decode_fit_result(reply.payload);
        res.ok = true;
      } else if (cmd->kind == Command::kEvaluate && reply.type == MsgType::kEvaluateResult) {
        res.eval = decode_evaluate_result(reply.payload);
        res.ok = true;
      } else if (reply.type == MsgType::kError) {
        spdlog::warn("client {}: error reply: {}", h->id, decode_error(reply.payload).text);
      } else {
        spdlog::warn("client {}: unexpected reply type", h->id);
      }
      st->results.push(std::move(res));
      in_flight.reset();
    }
  } catch (const std::exception& ex) {
    spdlog::warn("client {} connection lost: {}", h->id, ex.what());
    if (in_flight) fail_command(*in_flight);
  }

  // Refuse new commands, then fail any already queued, then deregister.
  h->mailbox.close();
  while (auto cmd = h->mailbox.pop()) fail_command(*cmd);
  {
    std::lock_guard lock(st->mu);
    st->live.erase(h->id);
  }
  st->joined_cv.notify_all();
}

void append_csv_row(std::ofstream& out, int round, const RoundMetrics& m) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g,%.17g\n", round, m.loss, m.iou,
                m.pixel_accuracy, m.dice);
  out << buf;
  out.flush();
}

}  // namespace

TrainingLog server_run(const ServerConfig& cfg) {
  namespace fs = std::filesystem;
  if (cfg.rounds < 1) throw std::invalid_argument("rounds must be >= 1");
  if (cfg.fraction_fit <= 0.0 || cfg.fraction_fit > 1.0 || cfg.fraction_eval <= 0.0 ||
      cfg.fraction_eval > 1.0)
    throw std::invalid_argument("fractions must be in (0, 1]");
  if (cfg.min_fit < 1 || cfg.min_eval < 1 || cfg.min_available < 1)
    throw std::invalid_argument("minimum counts must be >= 1");
  if (cfg.save_dir.empty()) throw std::invalid_argument("save_dir required");

  ModelParams manifest = cfg.model_config.tensors.empty() ? make_model_params() : cfg.model_config;
  ModelParams global;
  if (!cfg.initial_checkpoint.empty()) {
    global = load_checkpoint(cfg.initial_checkpoint);
    if (!same_manifest(global, manifest))
      throw std::runtime_error("initial checkpoint manifest does not match model config");
  } else {
    global = manifest;
    for (auto& t : global.tensors) std::fill(t.data.begin(), t.data.end(), 0.0f);
  }

  fs::create_directories(cfg.save_dir);
  std::ofstream fit_csv(fs::path(cfg.save_dir) / "metrics.csv", std::ios::trunc);
  std::ofstream eval_csv;
  if (!fit_csv) throw std::runtime_error("cannot open metrics.csv for writing");
  fit_csv << "round,loss,iou,pixel_accuracy,dice\n";
  fit_csv.flush();
  if (cfg.run_eval_rounds) {
    eval_csv.open(fs::path(cfg.save_dir) / "eval_metrics.csv", std::ios::trunc);
    if (!eval_csv) throw std::runtime_error("cannot open eval_metrics.csv for writing");
    eval_csv << "round,loss,iou,pixel_accuracy,dice\n";
    eval_csv.flush();
  }

  TcpListener listener(cfg.listen_address);
  spdlog::info("server listening on port {}", listener.port());

  ServerState st;
  std::thread accept_thread([&] {
    while (auto stream = listener.accept()) {
      std::shared_ptr<Handler> h = std::make_shared<Handler>();
      h->stream = std::move(stream);
      std::lock_guard lock(st.mu);
      st.all.push_back(h);
      h->thread = std::thread([h, &st] {
        try {
          Frame join = read_frame(*h->stream);
          if (join.type != MsgType::kJoinRequest) {
            write_frame(*h->stream,
                        Frame{MsgType::kError, encode_error({"expected JoinRequest"})});
            return;
          }
          {
            std::lock_guard lock(st.mu);
            h->id = st.next_id++;
            st.live[h->id] = h;
          }
          write_frame(*h->stream, Frame{MsgType::kJoinAck, encode_join_ack({h->id})});
          spdlog::info("client {} joined", h->id);
          st.joined_cv.notify_all();
        } catch (const std::exception& ex) {
          spdlog::warn("join handshake failed: {}", ex.what());
          return;
        }
        handler_main(h, &st);
      });
    }
  });

  auto cleanup = [&] {
    {
      std::lock_guard lock(st.mu);
      for (auto& [id, h] : st.live) h->mailbox.close();
      for (auto& h : st.all)
        if (h->stream) h->stream->shutdown();
    }
    listener.close();
    if (accept_thread.joinable()) accept_thread.join();
    std::vector<std::shared_ptr<Handler>> all;
    {
      std::lock_guard lock(st.mu);
      all = st.all;
    }
    for (auto& h : all)
      if (h->thread.joinable()) h->thread.join();
    st.results.close();
  };

  if (cfg.on_listening) cfg.on_listening(listener.port());

  TrainingLog log;
  log.bound_port = listener.port();
  try {
    {
      std::unique_lock lock(st.mu);
      st.joined_cv.wait(lock, [&] {
        return static_cast<int>(st.live.size()) >= cfg.min_available;
      });
    }
    spdlog::info("{} clients available, starting {} rounds", cfg.min_available, cfg.rounds);

    size_t fit_cursor = 0, eval_cursor = 0;

    // Round-robin pick over live clients in join order.
    auto select = [&](double fraction, size_t& cursor) {
      std::vector<std::shared_ptr<Handler>> live;
      {
        std::lock_guard lock(st.mu);
        for (auto& [id, h] : st.live) live.push_back(h);
      }
      std::vector<std::shared_ptr<Handler>> picked;
      if (live.empty()) return picked;
      size_t count = static_cast<size_t>(
          std::ceil(fraction * static_cast<double>(live.size())));
      count = std::clamp<size_t>(count, 1, live.size());
      size_t start = cursor % live.size();
      for (size_t i = 0; i < count; ++i) picked.push_back(live[(start + i) % live.size()]);
      cursor += count;
      return picked;
    };

    for (int round = 1; round <= cfg.rounds; ++round) {
      std::vector<ClientUpdate> updates;
      bool round_ok = false;

      for (int attempt = 0; attempt < 2 && !round_ok; ++attempt) {
        auto selected = select(cfg.fraction_fit, fit_cursor);
        if (static_cast<int>(selected.size()) < cfg.min_fit) {
          spdlog::warn("round {}: only {} clients live (< min_fit {})", round, selected.size(),
                       cfg.min_fit);
          continue;
        }
        FitInstructionMsg msg{static_cast<uint32_t>(round), cfg.fit_config, global};
        auto bytes = std::make_shared<const std::vector<uint8_t>>(encode_fit_instruction(msg));

        std::map<uint32_t, std::shared_ptr<Handler>> pending;
        std::map<uint32_t, ClientUpdate> collected;
        for (auto& h : selected) {
          if (h->mailbox.push(Command{Command::kFit, static_cast<uint32_t>(round), bytes}))
            pending[h->id] = h;
          else
            spdlog::warn("round {}: client {} gone before instruction", round, h->id);
        }

        auto deadline = std::chrono::steady_clock::now() +
                        std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                            std::chrono::duration<double>(cfg.round_timeout_s));
        while (!pending.empty()) {
          auto res = st.results.pop_until(deadline);
          if (!res) {
            for (auto& [id, h] : pending)
              spdlog::warn("round {}: client {} timed out, dropping for this round", round, id);
            break;
          }
          if (res->round != static_cast<uint32_t>(round) || res->is_eval) continue;
          auto it = pending.find(res->client_id);
          if (it == pending.end()) continue;
          pending.erase(it);
          if (res->ok)
            collected[res->client_id] =
                ClientUpdate{std::move(res->fit.params), res->fit.n_samples, res->fit.metrics};
        }

        if (static_cast<int>(collected.size()) >= cfg.min_fit) {
          updates.clear();
          for (auto& [id, u] : collected) updates.push_back(std::move(u));
          round_ok = true;
        } else {
          spdlog::warn("round {}: {} of {} updates arrived (min_fit {}), attempt {}", round,
                       collected.size(), selected.size(), cfg.min_fit, attempt + 1);
        }
      }

      if (!round_ok) {
        spdlog::error("round {} failed twice, aborting", round);
        cleanup();
        throw std::runtime_error("federated round " + std::to_string(round) + " failed");
      }

      auto agg = aggregate_fit(round, updates);
      if (!agg) {
        cleanup();
        throw std::runtime_error("aggregation yielded no result");
      }
      global = std::move(agg->first);
      log.fit_rounds.push_back(agg->second);
      log.checkpoint_paths.push_back(
          save_aggregated_model(cfg.save_dir, round, global, manifest));
      append_csv_row(fit_csv, round, agg->second);

      if (cfg.run_eval_rounds) {
        auto selected = select(cfg.fraction_eval, eval_cursor);
        EvaluateInstructionMsg msg{static_cast<uint32_t>(round),
                                   static_cast<uint32_t>(cfg.eval_samples), global};
        auto bytes =
            std::make_shared<const std::vector<uint8_t>>(encode_evaluate_instruction(msg));
        std::map<uint32_t, std::shared_ptr<Handler>> pending;
        std::vector<std::pair<RoundMetrics, uint64_t>> entries;
        for (auto& h : selected)
          if (h->mailbox.push(Command{Command::kEvaluate, static_cast<uint32_t>(round), bytes}))
            pending[h->id] = h;
        auto deadline = std::chrono::steady_clock::now() +
                        std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                            std::chrono::duration<double>(cfg.round_timeout_s));
        while (!pending.empty()) {
          auto res = st.results.pop_until(deadline);
          if (!res) break;
          if (res->round != static_cast<uint32_t>(round) || !res->is_eval) continue;
          auto it = pending.find(res->client_id);
          if (it == pending.end()) continue;
          pending.erase(it);
          if (res->ok) entries.emplace_back(res->eval.metrics, res->eval.n_samples);
        }
        if (static_cast<int>(entries.size()) >= cfg.min_eval) {
          RoundMetrics m = weighted_metrics(entries);
          log.eval_rounds.push_back(m);
          append_csv_row(eval_csv, round, m);
        } else {
          spdlog::warn("round {}: evaluate round skipped ({} replies)", round, entries.size());
        }
      }
    }

    // Broadcast the final model, then let handlers deliver it before any
    // socket is torn down.
    auto bytes = std::make_shared<const std::vector<uint8_t>>(encode_shutdown({global}));
    {
      std::lock_guard lock(st.mu);
      for (auto& [id, h] : st.live) h->mailbox.push(Command{Command::kShutdown, 0, bytes});
    }
    {
      std::unique_lock lock(st.mu);
      st.joined_cv.wait_for(lock, std::chrono::seconds(30), [&] { return st.live.empty(); });
    }
  } catch (...) {
    cleanup();
    throw;
  }

  cleanup();
  log.final_params = std::move(global);
  spdlog::info("federated training complete: {} rounds", cfg.rounds);
  return log;
}

int client_run(const ClientConfig& cfg, const std::vector<SamplePair>& data) {
  if (data.empty()) {
    spdlog::error("client has no local samples");
    return 1;
  }
  const ModelParams manifest = make_model_params();

  for (int attempt = 0; attempt < cfg.connect_attempts; ++attempt) {
    if (attempt > 0) {
      double delay = cfg.backoff_base_s * std::pow(2.0, attempt - 1);
      spdlog::info("retrying connection in {:.1f}s", delay);
      std::this_thread::sleep_for(std::chrono::duration<double>(delay));
    }
    try {
      auto stream = tcp_connect(cfg.server_address);
      write_frame(*stream, Frame{MsgType::kJoinRequest, {}});
      Frame ack = read_frame(*stream);
      if (ack.type != MsgType::kJoinAck) throw ProtocolError("expected JoinAck");
      uint32_t id = decode_join_ack(ack.payload).client_id;
      spdlog::info("joined as client {}", id);
      if (cfg.on_joined) cfg.on_joined();

      while (true) {
        Frame frame = read_frame(*stream);
        if (frame.type == MsgType::kFitInstruction) {
          FitInstructionMsg msg = decode_fit_instruction(frame.payload);
          if (!same_manifest(msg.params, manifest)) {
            write_frame(*stream,
                        Frame{MsgType::kError, encode_error({"parameter manifest mismatch"})});
            return 1;
          }
          spdlog::info("round {}: training on {} samples", msg.round, data.size());
          spdlog::debug("instruction config: epochs={} steps={} batch={} lr={}",
                        msg.config.epochs, msg.config.steps_per_epoch, msg.config.batch_size,
                        msg.config.lr);
          ModelParams params = msg.params;
          RoundMetrics metrics = train_local(params, data, cfg.train);
          FitResultMsg reply{std::move(params), data.size(), metrics};
          write_frame(*stream, Frame{MsgType::kFitResult, encode_fit_result(reply)});
        } else if (frame.type == MsgType::kEvaluateInstruction) {
          EvaluateInstructionMsg msg = decode_evaluate_instruction(frame.payload);
          if (!same_manifest(msg.params, manifest)) {
            write_frame(*stream,
                        Frame{MsgType::kError, encode_error({"parameter manifest mismatch"})});
            return 1;
          }
          RoundMetrics metrics =
              evaluate(msg.params, data, static_cast<int>(msg.n_samples), cfg.train.loss);
          uint64_t n_eval = std::min<uint64_t>(msg.n_samples, data.size());
          write_frame(*stream,
                      Frame{MsgType::kEvaluateResult, encode_evaluate_result({metrics, n_eval})});
        } else if (frame.type == MsgType::kShutdown) {
          ShutdownMsg msg = decode_shutdown(frame.payload);
          if (!cfg.model_out.empty()) {
            save_checkpoint(cfg.model_out, msg.params);
            spdlog::info("final model saved to {}", cfg.model_out);
          }
          return 0;
        } else if (frame.type == MsgType::kError) {
          spdlog::error("server error: {}", decode_error(frame.payload).text);
          return 1;
        } else {
          throw ProtocolError("unexpected message from server");
        }
      }
    } catch (const std::exception& ex) {
      spdlog::warn("connection attempt {} failed: {}", attempt + 1, ex.what());
    }
  }
  spdlog::error("could not complete a federated session after {} attempts",
                cfg.connect_attempts);
  return 1;
}

}  // namespace foamfed
