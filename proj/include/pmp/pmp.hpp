#pragma once

#include "pmp/core.hpp"
#include "pmp/linprog.hpp"
#include "pmp/cone_geometry.hpp"
#include "pmp/flows.hpp"
#include "pmp/control_system.hpp"
#include "pmp/perturbations.hpp"
#include "pmp/maximum_principle.hpp"
#include "pmp/shooting.hpp"
#include "pmp/reachable.hpp"
#include "pmp/problem.hpp"
