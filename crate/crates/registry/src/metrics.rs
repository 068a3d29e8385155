//! Transparency metrics in the Prometheus text exposition format.

use hawk_core::{Phase, Side, TrafficRecord};
use hawk_release::{GeoClass, PurposeViolation};
use prometheus::{Encoder, Histogram, HistogramOpts, IntCounterVec, IntGauge, Opts, Registry, TextEncoder};

pub const PAYLOAD_BUCKETS: [f64; 7] = [256.0, 1024.0, 4096.0, 16384.0, 65536.0, 262144.0, 1048576.0];

pub struct Metrics {
    registry: Registry,
    exchanges: IntCounterVec,
    third_country: IntCounterVec,
    purpose_violations: IntCounterVec,
    unmapped: IntGauge,
    payload_bytes: Histogram,
}

impl Default for Metrics {
    fn default() -> Self {
        Self::new()
    }
}

impl Metrics {
    pub fn new() -> Self {
        let registry = Registry::new();
        let exchanges = IntCounterVec::new(
            Opts::new("hawk_exchanges_total", "Exchanges observed, counted once per client request."),
            &["client", "server"],
        )
        .expect("metric opts");
        let third_country = IntCounterVec::new(
            Opts::new("hawk_third_country_requests_total", "Outgoing requests by destination geolocation class."),
            &["class"],
        )
        .expect("metric opts");
        let purpose_violations = IntCounterVec::new(
            Opts::new("hawk_purpose_violations_total", "Requests breaching a purpose-limitation rule."),
            &["rule", "client"],
        )
        .expect("metric opts");
        let unmapped = IntGauge::new("hawk_unmapped_fields", "Observed endpoint fields without a definition.")
            .expect("metric opts");
        let payload_bytes = Histogram::with_opts(
            HistogramOpts::new("hawk_payload_bytes", "Request payload size of observed exchanges.")
                .buckets(PAYLOAD_BUCKETS.to_vec()),
        )
        .expect("metric opts");
        for c in [
            Box::new(exchanges.clone()) as Box<dyn prometheus::core::Collector>,
            Box::new(third_country.clone()),
            Box::new(purpose_violations.clone()),
            Box::new(unmapped.clone()),
            Box::new(payload_bytes.clone()),
        ] {
            registry.register(c).expect("unique metric names");
        }
        for class in GeoClass::ALL {
            third_country.with_label_values(&[class.label()]);
        }
        Metrics { registry, exchanges, third_country, purpose_violations, unmapped, payload_bytes }
    }

    /// Accounts one newly stored record. Only the client-side request record
    /// of an exchange feeds the exchange, geolocation and size metrics.
    pub fn observe(&self, record: &TrafficRecord, destination: GeoClass) {
        if record.side == Side::Client && record.phase == Phase::Request {
            self.exchanges
                .with_label_values(&[record.client_name(), record.endpoint.service.as_str()])
                .inc();
            self.third_country.with_label_values(&[destination.label()]).inc();
            self.payload_bytes.observe(record.payload_bytes as f64);
        }
    }

    pub fn observe_violation(&self, violation: &PurposeViolation) {
        self.purpose_violations
            .with_label_values(&[violation.rule.as_str(), violation.client.as_str()])
            .inc();
    }

    pub fn set_unmapped(&self, n: usize) {
        self.unmapped.set(n as i64);
    }

    pub fn render(&self) -> String {
        let mut out = Vec::new();
        TextEncoder::new()
            .encode(&self.registry.gather(), &mut out)
            .expect("text encoding");
        let mut text = String::from_utf8(out).expect("utf-8 exposition");
        // labelled families without series are otherwise left out entirely
        for (name, help) in [
            ("hawk_exchanges_total", "Exchanges observed, counted once per client request."),
            ("hawk_purpose_violations_total", "Requests breaching a purpose-limitation rule."),
        ] {
            if !text.contains(&format!("# TYPE {name} ")) {
                text.push_str(&format!("# HELP {name} {help}\n# TYPE {name} counter\n"));
            }
        }
        text
    }
}
