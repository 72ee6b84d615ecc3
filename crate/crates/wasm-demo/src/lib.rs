//! wasm-bindgen wrapper used by `www/index.html`. Every method returns JSON.

use wasm_bindgen::prelude::*;

pub mod demo;

use demo::{DemoSettings, DemoState};

fn to_json<T: serde::Serialize>(value: &T) -> Result<String, JsError> {
    serde_json::to_string(value).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub struct Demo {
    state: DemoState,
}

#[wasm_bindgen]
impl Demo {
    /// Trains a synthetic ensemble; `steps` is per member.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, members: u32, mixup_alpha: f64, steps: u32) -> Result<Demo, JsError> {
        let settings = DemoSettings {
            seed: u64::from(seed),
            members: members as usize,
            mixup_alpha,
            steps: steps as usize,
        };
        let state = DemoState::train(settings).map_err(|e| JsError::new(&e))?;
        Ok(Demo { state })
    }

    #[wasm_bindgen(getter)]
    pub fn members(&self) -> u32 {
        self.state.members() as u32
    }

    /// Reliability diagram data for method `a`-`d` under a pooling rule.
    pub fn reliability(&self, method: &str, rule: &str) -> Result<String, JsError> {
        to_json(&self.state.reliability(method, rule).map_err(|e| JsError::new(&e))?)
    }

    /// Reliability of the pooled predictions at temperature `tau`.
    #[wasm_bindgen(js_name = atTemperature)]
    pub fn at_temperature(&self, rule: &str, tau: f64) -> Result<String, JsError> {
        to_json(&self.state.at_temperature(rule, tau).map_err(|e| JsError::new(&e))?)
    }

    /// Metrics of all four methods.
    pub fn compare(&self, rule: &str) -> Result<String, JsError> {
        to_json(&self.state.compare(rule).map_err(|e| JsError::new(&e))?)
    }
}
