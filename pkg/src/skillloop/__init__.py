"""skillloop: an interactive correction-orchestration engine for tabletop skills.

A simulated robot executes planned skills step by step while a user (human or
scripted oracle) issues online corrections.  Corrections are routed to plan- or
skill-level handlers, distilled into reusable knowledge, and retrieved by
semantic and visual similarity so that later iterations of a task need fewer
corrections.
"""

__version__ = "0.1.0"
