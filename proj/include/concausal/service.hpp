#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "concausal/pipeline.hpp"

namespace httplib {
class Server;
}

namespace concausal {

struct Reply {
  int status = 200;
  Json body;
};

using QueryParams = std::map<std::string, std::string>;

// Read-only view over loaded artifacts. Every handler is const and every
// body carries "provenance_hash"; errors are {code, message, field}.
class QueryService {
 public:
  explicit QueryService(LoadedArtifacts artifacts);

  Reply health() const;
  Reply instances() const;
  Reply concepts(const std::string& id) const;
  Reply rank(const QueryParams& params) const;
  Reply query(const std::string& body) const;
  Reply nn(const QueryParams& params) const;

  const std::string& provenance_hash() const { return hash_; }
  const LoadedArtifacts& artifacts() const { return a_; }

 private:
  struct Observed {
    std::size_t id = 0;
    std::vector<Tensor> codes;  // per level
    Tensor output;              // autoencoded network, no interventions
    std::size_t net_predicted = 0;
    DiscreteRecord record;
  };

  Reply error(int status, const std::string& code, const std::string& message, const std::string& field) const;
  Reply ok(Json body) const;
  const Observed* find(std::size_t id) const;

  LoadedArtifacts a_;
  std::string hash_;
  std::vector<Observed> observed_;  // test split, id order
};

// Routes: GET /health, /instances, /instances/{id}/concepts, /rank, /nn;
// POST /query.
std::unique_ptr<httplib::Server> make_server(const QueryService& service);
// Blocks until the server stops.
void serve(const QueryService& service, const std::string& host, int port);

}  // namespace concausal
