//! Intelligent Driver Model car following and MOBIL lane-change decisions.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdmParams {
    pub time_headway: f64,
    pub min_gap: f64,
    pub max_accel: f64,
    pub comfort_decel: f64,
    pub exponent: i32,
    /// Hard physical braking limit applied to the IDM output.
    pub max_brake: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        Self {
            time_headway: 1.5,
            min_gap: 2.0,
            max_accel: 1.5,
            comfort_decel: 2.0,
            exponent: 4,
            max_brake: 9.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MobilParams {
    pub politeness: f64,
    pub accel_threshold: f64,
    pub safe_decel: f64,
}

impl Default for MobilParams {
    fn default() -> Self {
        Self {
            politeness: 0.3,
            accel_threshold: 0.2,
            safe_decel: 3.0,
        }
    }
}

/// The vehicle ahead as seen by a follower: bumper gap and its speed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Leader {
    pub gap: f64,
    pub speed: f64,
}

impl IdmParams {
    pub fn desired_gap(&self, speed: f64, closing_speed: f64) -> f64 {
        let dynamic = speed * self.time_headway
            + speed * closing_speed / (2.0 * (self.max_accel * self.comfort_decel).sqrt());
        self.min_gap + dynamic.max(0.0)
    }

    pub fn accel(&self, speed: f64, desired_speed: f64, leader: Option<Leader>) -> f64 {
        let free = 1.0 - (speed.max(0.0) / desired_speed).powi(self.exponent);
        let interaction = match leader {
            Some(l) if l.gap <= 0.0 => return -self.max_brake,
            Some(l) => {
                let s_star = self.desired_gap(speed, speed - l.speed);
                (s_star / l.gap).powi(2)
            }
            None => 0.0,
        };
        (self.max_accel * (free - interaction)).max(-self.max_brake)
    }
}

/// Inputs to one MOBIL evaluation. Accelerations are IDM values with the
/// candidate vehicle in its current lane (`*_now`) and after the change (`*_after`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MobilInputs {
    pub self_now: f64,
    pub self_after: f64,
    pub new_follower_now: f64,
    pub new_follower_after: f64,
    pub old_follower_now: f64,
    pub old_follower_after: f64,
}

impl MobilParams {
    pub fn is_safe(&self, inputs: &MobilInputs) -> bool {
        inputs.new_follower_after >= -self.safe_decel && inputs.self_after >= -self.safe_decel
    }

    pub fn incentive(&self, inputs: &MobilInputs) -> f64 {
        (inputs.self_after - inputs.self_now)
            + self.politeness
                * ((inputs.new_follower_after - inputs.new_follower_now)
                    + (inputs.old_follower_after - inputs.old_follower_now))
    }

    pub fn should_change(&self, inputs: &MobilInputs) -> bool {
        self.is_safe(inputs) && self.incentive(inputs) > self.accel_threshold
    }
}
