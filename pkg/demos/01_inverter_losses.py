"""
Loss breakdown of a phase-shifted full bridge
=============================================

Evaluate the analytical loss model at one operating point, then watch how
the switching loss moves with the duty cycle.
"""

import numpy as np

from bhvloss import GateDriveCondition, OperatingPoint, reference_device, total_loss

# the shipped device file carries placeholder datasheet values
device = reference_device()
print(device)

# one operating point under one gate-drive condition
op = OperatingPoint(f_s=75e3, v_in=300.0, d=0.5, r_t=70.0)
gd = GateDriveCondition.symmetric(v_dr=15.0, r_g=3.0)
lb = total_loss(op, gd, device)
print(f"conduction  {lb.p_cond:.4f} W")
print(f"body diode  {lb.p_bd:.4f} W")
print(f"gate drive  {lb.p_gt:.4f} W")
print(f"overlap     {lb.p_ov:.4f} W")
print(f"switching   {lb.p_sw:.4f} W at {lb.t_final:.2f} degC "
      f"after {lb.iterations} thermal iterations")

# switching loss versus duty cycle: the fundamental current grows with d
# while the transition current sin(alpha) shrinks
for d in np.linspace(0.1, 1.0, 10):
    lb = total_loss(OperatingPoint(75e3, 300.0, d, 70.0), gd, device)
    print(f"d={d:.1f}  p_sw={lb.p_sw:7.4f} W  p_cond={lb.p_cond:7.4f} W")

# a stiffer gate drive shortens both transitions
for v_dr in (10.0, 15.0, 20.0):
    lb = total_loss(op, GateDriveCondition.symmetric(v_dr, 3.0), device)
    print(f"v_dr={v_dr:4.1f} V  p_ov={lb.p_ov:.4f} W  p_gt={lb.p_gt:.4f} W")
