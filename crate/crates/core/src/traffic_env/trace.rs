use std::io::Write;

use super::sim::TrafficStep;

/// Writes one CSV row per simulation step.
///
/// The `vehicles` column holds `id:s:speed:status:r_terminal:r_danger:r_speed`
/// entries joined by `;`, in the order the vehicles were stepped. Floats use
/// the shortest representation that round-trips, so two runs agree byte for
/// byte exactly when their trajectories do.
pub struct TraceWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(out: W) -> csv::Result<Self> {
        let mut inner = csv::Writer::from_writer(out);
        inner.write_record(["step", "sim_time", "vehicles", "spawned"])?;
        Ok(Self { inner })
    }

    pub fn write_step(&mut self, step: &TrafficStep) -> csv::Result<()> {
        let vehicles = step
            .outcomes
            .iter()
            .map(|o| {
                format!(
                    "{}:{}:{}:{}:{}:{}:{}",
                    o.id,
                    o.s,
                    o.speed,
                    o.status.as_str(),
                    o.reward.r_terminal,
                    o.reward.r_danger,
                    o.reward.r_speed
                )
            })
            .collect::<Vec<_>>()
            .join(";");
        let spawned = step
            .spawned
            .iter()
            .map(|(id, _)| id.to_string())
            .collect::<Vec<_>>()
            .join(";");
        self.inner.write_record([
            step.step.to_string(),
            step.sim_time.to_string(),
            vehicles,
            spawned,
        ])
    }

    pub fn finish(mut self) -> std::io::Result<W> {
        self.inner.flush()?;
        self.inner
            .into_inner()
            .map_err(|e| std::io::Error::other(e.to_string()))
    }
}
