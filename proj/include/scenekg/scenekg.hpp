#pragma once

// Everything in one include.

#include "scenekg/error.hpp"
#include "scenekg/geometry.hpp"
#include "scenekg/json_io.hpp"
#include "scenekg/schema.hpp"
#include "scenekg/config.hpp"
#include "scenekg/ingestion.hpp"
#include "scenekg/union_find.hpp"
#include "scenekg/pooling.hpp"
#include "scenekg/energy.hpp"
#include "scenekg/energy_fit.hpp"
#include "scenekg/scene_kg.hpp"
#include "scenekg/algebra.hpp"
#include "scenekg/dsl.hpp"
#include "scenekg/session.hpp"
#include "scenekg/synth.hpp"
#include "scenekg/evaluation.hpp"
#include "scenekg/pipeline.hpp"
