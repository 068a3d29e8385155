use axum::http::{HeaderMap, HeaderName, HeaderValue};

/// Returns the exchange id carried in `header`, generating and injecting a
/// UUIDv4 when the caller did not send one. Existing values pass through
/// untouched.
pub fn ensure_request_id(headers: &mut HeaderMap, header: &HeaderName) -> String {
    if let Some(v) = headers.get(header) {
        if let Ok(s) = v.to_str() {
            if !s.is_empty() {
                return s.to_owned();
            }
        }
    }
    let id = uuid::Uuid::new_v4().to_string();
    headers.insert(header.clone(), HeaderValue::from_str(&id).expect("uuid is a valid header value"));
    id
}

#[cfg(test)]
mod tests {
    use super::*;

    fn name() -> HeaderName {
        HeaderName::from_static("x-request-id")
    }

    #[test]
    fn existing_id_passes_through() {
        let mut h = HeaderMap::new();
        h.insert("x-request-id", HeaderValue::from_static("abc"));
        let before = h.clone();
        assert_eq!(ensure_request_id(&mut h, &name()), "abc");
        assert_eq!(h, before);
    }

    #[test]
    fn missing_id_is_generated_and_injected() {
        let mut h = HeaderMap::new();
        let id = ensure_request_id(&mut h, &name());
        let parsed = uuid::Uuid::parse_str(&id).unwrap();
        assert_eq!(parsed.get_version_num(), 4);
        assert_eq!(h.get("x-request-id").unwrap(), id.as_str());
    }

    #[test]
    fn generated_ids_differ() {
        let a = ensure_request_id(&mut HeaderMap::new(), &name());
        let b = ensure_request_id(&mut HeaderMap::new(), &name());
        assert_ne!(a, b);
    }
}
