#pragma once

#include "flowlik/config.hpp"
#include "flowlik/efficiency.hpp"
#include "flowlik/error.hpp"
#include "flowlik/estimators.hpp"
#include "flowlik/flow.hpp"
#include "flowlik/flow_size.hpp"
#include "flowlik/ingest.hpp"
#include "flowlik/likelihood.hpp"
#include "flowlik/netflow.hpp"
#include "flowlik/optimizer.hpp"
#include "flowlik/simulator.hpp"
#include "flowlik/study.hpp"
#include "flowlik/traffic_model.hpp"
