"""Secure wearable infusion pump stack.

Server side: one-time expiring token auth, MAC-bound device accounts,
prescription ("infusion index") management with physician limits, and an
append-only infusion history. Device side: a deterministic discrete-event
simulation of the syringe pump that converts prescriptions into stepper
schedules and adapts mid-infusion via polling. A bench harness reproduces
the load and accuracy evaluations.
"""

__version__ = "0.1.0"
