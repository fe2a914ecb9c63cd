#pragma once

#include "eids/announce.hpp"
#include "eids/bench.hpp"
#include "eids/engine.hpp"
#include "eids/flow_table.hpp"
#include "eids/frame_builder.hpp"
#include "eids/logger.hpp"
#include "eids/model_format.hpp"
#include "eids/net_types.hpp"
#include "eids/packet.hpp"
#include "eids/pcap.hpp"
#include "eids/sim.hpp"
#include "eids/sim_config.hpp"
#include "eids/stats.hpp"
#include "eids/timing.hpp"
