//! Saddle-point inverse reinforcement learning (placeholder).
