"""A virtual haptic device drags a rigid tool through a spring coupling.

The device follows waypoints at constant speed.  The tool is pulled by the
coupling force k (p_device - p_tool) and slowed by velocity damping c v, so
in steady state it trails the device by m c v / k.  Stiffer couplings trail
less.  The wrench rendered back to the operator is the coupling reaction.
"""
import numpy as np

from softsim.runtime import run_deterministic
from softsim.scene import build_scene

SPEED = 0.05  # m/s along x
MASS, DAMPING = 0.1, 5.0


def scene_for(k):
    return {
        "gravity": [0, 0, 0],
        "scheduler": {"period": 0.002, "slack": 0.001},
        "bodies": [{"name": "tool", "type": "rigid", "mass": MASS, "linear_damping": DAMPING,
                    "angular_damping": DAMPING}],
        "haptics": [{"name": "device", "body": "tool", "stiffness_linear": k, "stiffness_angular": 0.1,
                     "waypoints": [{"t": 0.0, "position": [0, 0, 0]},
                                   {"t": 10.0, "position": [10 * SPEED, 0, 0]}]}],
    }


def main():
    print(f"device speed {SPEED} m/s, tool mass {MASS} kg, damping {DAMPING} 1/s")
    print(f"{'k [N/m]':>8} {'lag [mm]':>10} {'m c v / k [mm]':>15} {'feedback [N]':>13}")
    for k in (50.0, 200.0, 800.0):
        scene = build_scene(scene_for(k))
        run_deterministic(scene, 1500)
        dev = scene.devices[0]
        lag = dev.pose(scene.time).translation[0] - scene.bodies["tool"].pose(0).translation[0]
        fb = np.linalg.norm(dev.feedback[0])
        print(f"{k:8.0f} {1e3 * lag:10.3f} {1e3 * MASS * DAMPING * SPEED / k:15.3f} {fb:13.4f}")


if __name__ == "__main__":
    main()
