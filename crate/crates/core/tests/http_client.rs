use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use serde_json::Value;

use rc_instruct::bootstrap::client::{HttpTransport, Transport};
use rc_instruct::bootstrap::ClientError;
use rc_instruct::model::ImageRecord;

struct Request {
    head: String,
    body: Value,
}

/// Serve `replies` to successive connections and report what was received.
fn serve(replies: Vec<(u16, String)>) -> (String, mpsc::Receiver<Request>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/complete", listener.local_addr().unwrap());
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for (status, body) in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut head = String::new();
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                head.push_str(&line);
            }
            let len = head
                .lines()
                .find_map(|l| {
                    let (k, v) = l.split_once(':')?;
                    k.eq_ignore_ascii_case("content-length").then(|| v.trim().parse::<usize>().unwrap())
                })
                .unwrap_or(0);
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            tx.send(Request {
                head,
                body: serde_json::from_slice(&buf).unwrap(),
            })
            .unwrap();
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    (url, rx)
}

fn image() -> ImageRecord {
    ImageRecord::new("img7", "images/7.jpg", 640, 480)
}

#[test]
fn posts_prompt_and_reads_text() {
    let (url, rx) = serve(vec![(200, r#"{"text":"It is at [0.100,0.200,0.300,0.400]."}"#.into())]);
    let t = HttpTransport::new(url, Some("secret".into()), Duration::from_secs(5));
    let answer = t.complete(&image(), "Where is the cup?").unwrap();
    assert_eq!(answer, "It is at [0.100,0.200,0.300,0.400].");

    let req = rx.recv().unwrap();
    assert!(req.head.starts_with("POST /v1/complete"), "{}", req.head);
    assert!(req.head.to_ascii_lowercase().contains("authorization: bearer secret"), "{}", req.head);
    assert_eq!(req.body["image_uri"], "images/7.jpg");
    assert_eq!(req.body["prompt"], "Where is the cup?");
    assert!(req.body.get("image_base64").is_none());
}

#[test]
fn inline_images_are_base64() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("7.jpg");
    std::fs::write(&path, b"\xff\xd8fake").unwrap();
    let (url, rx) = serve(vec![(200, r#"{"text":"ok"}"#.into())]);
    let img = ImageRecord::new("img7", format!("file://{}", path.display()), 640, 480);
    let t = HttpTransport::new(url, None, Duration::from_secs(5)).inline_images(true);
    assert_eq!(t.complete(&img, "p").unwrap(), "ok");
    let req = rx.recv().unwrap();
    assert_eq!(req.body["image_base64"], "/9hmYWtl");
    assert!(req.body.get("image_uri").is_none());
    assert!(!req.head.to_ascii_lowercase().contains("authorization"));
}

#[test]
fn error_status_and_bad_body_are_errors() {
    let (url, _rx) = serve(vec![(503, r#"{"error":"busy"}"#.into()), (200, r#"{"answer":"x"}"#.into())]);
    let t = HttpTransport::new(url, None, Duration::from_secs(5));
    assert!(t.complete(&image(), "p").is_err());
    assert!(matches!(t.complete(&image(), "p"), Err(ClientError::Protocol(_))), "missing text field");
}

#[test]
fn silent_server_times_out() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/", listener.local_addr().unwrap());
    let hold = thread::spawn(move || {
        let (s, _) = listener.accept().unwrap();
        thread::sleep(Duration::from_secs(2));
        drop(s);
    });
    let t = HttpTransport::new(url, None, Duration::from_millis(300));
    assert!(matches!(t.complete(&image(), "p"), Err(ClientError::Timeout)));
    hold.join().unwrap();
}
