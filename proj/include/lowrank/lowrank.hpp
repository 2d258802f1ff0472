#pragma once

#include <lowrank/data.hpp>
#include <lowrank/errors.hpp>
#include <lowrank/experiment.hpp>
#include <lowrank/image_io.hpp>
#include <lowrank/linalg.hpp>
#include <lowrank/metrics.hpp>
#include <lowrank/operators.hpp>
#include <lowrank/solvers.hpp>
#include <lowrank/sve.hpp>
