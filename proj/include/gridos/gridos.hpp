#pragma once

#include "broker.hpp"
#include "discovery.hpp"
#include "emit.hpp"
#include "error.hpp"
#include "event_queue.hpp"
#include "ids.hpp"
#include "metrics.hpp"
#include "migration.hpp"
#include "net_model.hpp"
#include "partition.hpp"
#include "random.hpp"
#include "resources.hpp"
#include "scenario.hpp"
#include "security.hpp"
#include "simulation.hpp"
#include "trace.hpp"
#include "workload.hpp"
