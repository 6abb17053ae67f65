use cellsvm_bridge::{last_error, session_count, session_create, session_free, ERROR, INVALID_HANDLE, OK};

fn global_error() -> String {
    let mut buf = [0u8; 256];
    let len = unsafe { last_error(-1, buf.as_mut_ptr().cast(), buf.len() as i64) };
    String::from_utf8(buf[..len as usize].to_vec()).unwrap()
}

#[test]
fn session_count_returns_to_zero() {
    assert_eq!(session_count(), 0);
    let x = [0.0, 1.0, 2.0];
    let y = [1.0, -1.0, 1.0];
    let mut last = 0;
    for round in 0..5 {
        let handles: Vec<i64> = (0..=round)
            .map(|_| unsafe { session_create(x.as_ptr(), 3, y.as_ptr(), 3, 3, 1) })
            .collect();
        assert_eq!(session_count(), handles.len() as i64);
        for &h in &handles {
            assert!(h > last, "ids are never reused");
            last = h;
        }
        for h in handles {
            assert_eq!(session_free(h), OK);
        }
        assert_eq!(session_count(), 0);
    }
}

// Lives apart from the session tests: the process-wide message is shared by all threads.
#[test]
fn failures_without_a_session_set_the_global_message() {
    let x = [0.0, 1.0, 2.0];
    let y = [1.0, -1.0];
    assert_eq!(unsafe { session_create(x.as_ptr(), 3, y.as_ptr(), 2, 3, 1) }, ERROR as i64);
    assert!(global_error().contains("expected n = 3"), "{}", global_error());
    assert_eq!(session_free(12345), INVALID_HANDLE);
    assert_eq!(global_error(), "invalid session handle 12345");
}
